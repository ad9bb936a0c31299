from .csib import CsibFormatError, read_csib, write_csib
from .preprocessing import (DatasetSplit, MovingAverageSmoother, ZScoreNormalizer, normalize,
                            split)
from .synth import ChannelParams, CsiDataset, CsiSample, class_phase, synth_generate

__all__ = [
    "ChannelParams", "CsiDataset", "CsiSample", "DatasetSplit", "MovingAverageSmoother",
    "ZScoreNormalizer", "CsibFormatError", "class_phase", "normalize", "read_csib", "split",
    "synth_generate", "write_csib",
]
