"""Group-VQ speech-codec tokens with parallel clean-token prediction for speech enhancement.

Modules: ``dsp`` (MDCT, STFT, resampling), ``codec`` (linear codec, GVQ/RVQ),
``enhance`` (feature extractor, prediction branches, training, inference),
``degrade`` (noise, reverb, band-limiting), ``metrics`` (LSD, SNR, RTF) and
``cli``.
"""

from .codec import Codec, GvqQuantizer, LinearCodecModel, RvqQuantizer, TokenSequence, load_codec, save_codec
from .dsp import AudioBuffer
from .enhance import EnhancerConfig, EnhancerModel, SerialEnhancerModel, load_enhancer, save_enhancer, train_enhancer

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer",
    "Codec",
    "EnhancerConfig",
    "EnhancerModel",
    "GvqQuantizer",
    "LinearCodecModel",
    "RvqQuantizer",
    "SerialEnhancerModel",
    "TokenSequence",
    "load_codec",
    "load_enhancer",
    "save_codec",
    "save_enhancer",
    "train_enhancer",
]
