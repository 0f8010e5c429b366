"""Self-supervised axial resolution enhancement for OCT B-frames.

Synthetic acquisition, free-space masks, a numpy residual U-Net trained with
measurement-consistency, equivariance and free-space losses, recurrent
inference, a Richardson-Lucy baseline and image quality metrics.
"""

from .estimators import (
    OPressEnhancer,
    RichardsonLucyDeconvolver,
    SupervisedEnhancer,
    check_frames,
)
from .exceptions import OPressError
from .imagecore import ALine, BFrame, Roi, normalize, read_octb, write_octb
from .maskgen import BilateralParams, Mask, generate_mask
from .objectives import LossWeights, ShiftBatch, ei_loss, fs_loss, mc_loss, total_loss
from .pipeline import (
    DatasetSplit,
    RecurrentConfig,
    TrainConfig,
    enhance,
    enhance_recurrent,
    split_dataset,
    train,
    train_supervised_reference,
)
from .quality import MetricsReport, cnr_db, enl, epi, fwhm_of_peak, psnr, snr_db, ssim
from .rldeconv import richardson_lucy
from .simulate import (
    PhantomSpec,
    Psf,
    ShiftTransform,
    degrade,
    gaussian_psf,
    make_phantom,
    sidelobe_psf,
)

__version__ = "0.1.0"

__all__ = [
    "ALine", "BFrame", "BilateralParams", "DatasetSplit", "LossWeights", "Mask",
    "MetricsReport", "OPressEnhancer", "OPressError", "PhantomSpec", "Psf",
    "RecurrentConfig", "RichardsonLucyDeconvolver", "Roi", "ShiftBatch", "ShiftTransform",
    "SupervisedEnhancer", "TrainConfig", "check_frames", "cnr_db", "degrade", "ei_loss",
    "enhance", "enhance_recurrent", "enl", "epi", "fs_loss", "fwhm_of_peak",
    "gaussian_psf", "generate_mask", "make_phantom", "mc_loss", "normalize", "psnr",
    "read_octb", "richardson_lucy", "sidelobe_psf", "snr_db", "split_dataset", "ssim",
    "total_loss", "train", "train_supervised_reference", "write_octb",
]
