"""
Synthetic corpora, raw image files and the byte-level tokenizer.
"""

from .corpus import build_sequences, load_captions, prompt_sequence, read_manifest
from .imageio import decode_images, encode_images, read_images, write_images
from .synth import (
    CaptionSample,
    caption_for,
    render_nodule,
    synth_captions,
    synth_instructions,
    write_corpus,
)
from .tokenizer import ByteTokenizer

__all__ = [
    "ByteTokenizer",
    "encode_images",
    "decode_images",
    "read_images",
    "write_images",
    "CaptionSample",
    "caption_for",
    "render_nodule",
    "synth_captions",
    "synth_instructions",
    "write_corpus",
    "read_manifest",
    "load_captions",
    "build_sequences",
    "prompt_sequence",
]
