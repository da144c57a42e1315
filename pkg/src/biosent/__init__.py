"""Biosignal sentence encoder toolkit."""

from .encoder import EncoderConfig, encode, encode_batch
from .signal import ChannelTrace, ChannelVocabulary, RawRecording, load_recording, save_recording
from .tokenizer import BiosignalSentence, TokenizerConfig, build_sentence, tokens_per_channel

__version__ = "0.1.0"

__all__ = [
    "BiosignalSentence",
    "ChannelTrace",
    "ChannelVocabulary",
    "EncoderConfig",
    "RawRecording",
    "TokenizerConfig",
    "build_sentence",
    "encode",
    "encode_batch",
    "load_recording",
    "save_recording",
    "tokens_per_channel",
]
