"""Dual-stream deformable multimodal registration on 3D volumes."""

from .volume import (BinaryMask, DisplacementField, Volume3, resample, sample_trilinear, upsample_field, warp,
                     warp_multichannel)
from .mind import MindParams, MindVolume, mind
from .losses import (LossValueGrad, SsimParams, TranslationLossWeights, cycle_consistency_loss,
                     identity_translation_loss, mind_l1_loss, mse_loss, smoothness_loss, ssim_index, ssim_loss,
                     translation_score)
from .translator import ArtifactInjector, Blob, GammaRemapTranslator, IdentityTranslator, Translator
from .registration import (FusionKernel, RegistrationConfig, RegistrationError, RegistrationResult, fuse, register,
                           register_mode, register_single_stream, total_loss)
from .metrics import LandmarkSet, dice, psnr, tre, warp_mask
from .phantom import PhantomCase, PhantomSpec, generate

__version__ = "0.1.0"
