from .augment import ChannelStats, augment, dataset_stats, normalize
from .io import (NetpbmError, PfmError, PfmMagicError, PfmScaleError, PfmTruncatedError,
                 load_dataset, read_pfm, read_pgm_mask, read_ppm, save_dataset, write_pfm,
                 write_pgm_mask, write_ppm)
from .synth import Calib, StereoSample, forward_map, synth_dataset, synth_stereogram
