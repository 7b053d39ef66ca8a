"""
Tests for the tokenizer, image files and synthetic corpora.
"""

import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from echo_moe.base.config import DataConfig
from echo_moe.data import (
    ByteTokenizer,
    build_sequences,
    caption_for,
    decode_images,
    encode_images,
    load_captions,
    prompt_sequence,
    read_images,
    read_manifest,
    render_nodule,
    synth_captions,
    synth_instructions,
    write_corpus,
    write_images,
)
from echo_moe.data.synth import CAPTIONS_FILE, MANIFEST_FILE
from echo_moe.exceptions import DataError, SerializationError
from echo_moe.numerics.rng import SplitMix64
from echo_moe.textpipe import normalize


class TestByteTokenizer:
    """Test the byte-level tokenizer."""

    def test_prompt_and_target(self):
        """Prompts are wrapped in begin and separator tokens; targets end with EOS."""
        tok = ByteTokenizer()
        assert tok.prompt_ids("Hi").tolist() == [256, 72, 105, 257]
        assert tok.target_ids("ok").tolist() == [111, 107, 258]

    def test_decode_drops_special_ids(self):
        tok = ByteTokenizer()
        assert tok.decode([256, 72, 105, 257, 258]) == "Hi"

    def test_utf8_round_trip(self):
        """Multi-byte characters survive encode and decode."""
        tok = ByteTokenizer()
        ids = tok.encode("échographie")
        assert len(ids) == len("échographie") + 1
        assert tok.decode(ids) == "échographie"

    def test_custom_special_ids(self):
        tok = ByteTokenizer(bos_id=29, sep_id=30, eos_id=31)
        assert tok.prompt_ids("")[[0, -1]].tolist() == [29, 30]


class TestImageIO:
    """Test raw image stacks."""

    def test_round_trip(self, temp_dir):
        """float32-representable pixels come back exactly."""
        stack = SplitMix64(1).uniform((3, 4, 5, 2)).astype(np.float32).astype(np.float64)
        path = write_images(temp_dir / "img" / "images.bin", stack)

        loaded = read_images(path)
        assert loaded.dtype == np.float64
        assert_array_equal(loaded, stack)

    def test_empty_stack(self):
        """An empty stack is just the header."""
        data = encode_images(np.zeros((0, 4, 4, 1)))
        assert len(data) == 16
        assert decode_images(data).shape == (0, 4, 4, 1)

    def test_bad_magic(self):
        data = bytearray(encode_images(np.zeros((1, 2, 2, 1))))
        data[0] ^= 0xFF
        with pytest.raises(DataError):
            decode_images(bytes(data))

    def test_truncated(self):
        data = encode_images(np.zeros((2, 2, 2, 1)))
        with pytest.raises(DataError):
            decode_images(data[:-4])
        with pytest.raises(DataError):
            decode_images(data[:10])

    def test_wrong_rank(self):
        with pytest.raises(DataError):
            encode_images(np.zeros((4, 4, 1)))

    def test_missing_file(self, temp_dir):
        with pytest.raises(SerializationError):
            read_images(temp_dir / "missing.bin")


class TestCaptions:
    """Test the synthetic caption corpus."""

    def test_caption_is_function_of_features(self):
        assert caption_for("upper left", "small", "hypoechoic") == (
            "hypoechoic small nodule upper left"
        )

    def test_nodule_is_visible(self, tiny_config):
        """The nodule quadrant is brighter than the opposite one."""
        image = render_nodule(tiny_config, "upper left", "large", "hyperechoic", SplitMix64(0))
        half = tiny_config.image_size // 2

        assert image.shape == (28, 28, 1)
        assert image[:half, :half].mean() > image[half:, half:].mean() + 0.1

    def test_deterministic(self, tiny_config):
        """The seed fixes images and captions."""
        a = synth_captions(3, 5, tiny_config)
        b = synth_captions(3, 5, tiny_config)

        assert [s.caption for s in a] == [s.caption for s in b]
        for x, y in zip(a, b):
            assert_array_equal(x.image, y.image)

    def test_features_match_caption(self, tiny_config):
        for sample in synth_captions(11, 8, tiny_config):
            f = sample.features
            assert sample.caption == caption_for(f["quadrant"], f["size"], f["echo"])

    def test_zero_count(self, tiny_config):
        assert synth_captions(0, 0, tiny_config) == []


class TestInstructions:
    """Test the synthetic instruction stream."""

    def test_planted_count(self):
        """Ten percent of 100 records are duplicates of earlier records."""
        records, truth = synth_instructions(5, 100, 0.1)
        position = {r.id: i for i, r in enumerate(records)}

        assert len(records) == 100
        assert len(truth) == 10
        assert len({r.id for r in records}) == 100
        assert all(position[row["of"]] < position[row["id"]] for row in truth)

    def test_duplicates_are_near_copies(self):
        """A planted duplicate keeps the question and changes at most one answer token."""
        records, truth = synth_instructions(6, 60, 0.2)
        by_id = {r.id: r for r in records}
        for row in truth:
            dup, src = by_id[row["id"]], by_id[row["of"]]
            dup_answer, src_answer = normalize(dup.answer), normalize(src.answer)

            assert normalize(dup.question) == normalize(src.question)
            assert len(dup_answer) == len(src_answer)
            assert sum(a != b for a, b in zip(dup_answer, src_answer)) <= 1

    def test_empty(self):
        assert synth_instructions(1, 0, 0.1) == ([], [])

    def test_deterministic(self):
        assert synth_instructions(2, 30, 0.1) == synth_instructions(2, 30, 0.1)


class TestCorpusFiles:
    """Test writing and loading a corpus directory."""

    @pytest.fixture
    def data_config(self, temp_dir):
        return DataConfig(corpus_dir=temp_dir / "corpus", count=4, instruction_count=20)

    def test_byte_identical(self, tiny_config, data_config, temp_dir):
        """The same arguments write the same bytes."""
        first = write_corpus(temp_dir / "a", 9, tiny_config, data_config)
        second = write_corpus(temp_dir / "b", 9, tiny_config, data_config)

        assert set(first) == {"images", "captions", "instructions", "truth", "manifest"}
        for key, path in first.items():
            assert path.read_bytes() == second[key].read_bytes()

    def test_load_captions(self, tiny_config, data_config, temp_dir):
        """Loaded samples reproduce the generated ones."""
        write_corpus(temp_dir / "c", 9, tiny_config, data_config)
        loaded = load_captions(temp_dir / "c")
        generated = synth_captions(9, 4, tiny_config)

        assert [s.caption for s in loaded] == [s.caption for s in generated]
        assert_array_equal(loaded[0].image, generated[0].image)
        assert read_manifest(temp_dir / "c")["captions"] == 4

    def test_count_mismatch(self, tiny_config, data_config, temp_dir):
        """Captions and images must pair up."""
        write_corpus(temp_dir / "c", 9, tiny_config, data_config)
        with open(temp_dir / "c" / CAPTIONS_FILE, "a", encoding="utf-8") as f:
            f.write(json.dumps({"id": "extra", "caption": "x"}) + "\n")

        with pytest.raises(DataError):
            load_captions(temp_dir / "c")

    def test_invalid_utf8_caption(self, tiny_config, data_config, temp_dir):
        """Undecodable caption bytes are a data error naming the line."""
        write_corpus(temp_dir / "c", 9, tiny_config, data_config)
        with open(temp_dir / "c" / CAPTIONS_FILE, "ab") as f:
            f.write(b'{"id": "extra", "caption": "\xff"}\n')

        with pytest.raises(DataError, match=f"{CAPTIONS_FILE}:5"):
            load_captions(temp_dir / "c")

    def test_missing_manifest(self, temp_dir):
        with pytest.raises(DataError):
            read_manifest(temp_dir)

    def test_foreign_manifest(self, temp_dir):
        (temp_dir / MANIFEST_FILE).write_text(json.dumps({"format": "other"}))
        with pytest.raises(DataError):
            read_manifest(temp_dir)


class TestSequences:
    """Test sequence assembly."""

    def test_build_sequences(self, tiny_config):
        """Each sample becomes prompt ids and caption ids with the image attached."""
        samples = synth_captions(1, 2, tiny_config)
        sequences = build_sequences(samples, tiny_config)

        assert len(sequences) == 2
        assert sequences[0].prompt_ids.tolist() == [256, *b"describe", 257]
        assert sequences[0].target_ids[-1] == 258
        assert ByteTokenizer().decode(sequences[0].target_ids) == samples[0].caption
        assert sequences[0].tag == samples[0].tag

    def test_prompt_sequence(self, tiny_config):
        seq = prompt_sequence("Hi", tiny_config)
        assert seq.image is None
        assert seq.prompt_ids.tolist() == [256, 72, 105, 257]

    def test_empty_prompt(self, tiny_config):
        """An empty prompt is refused."""
        with pytest.raises(DataError):
            prompt_sequence("   ", tiny_config)
