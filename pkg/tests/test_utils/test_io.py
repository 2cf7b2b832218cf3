"""Tests for I/O utilities."""
import json
import os
import tempfile

import pytest
from pydantic import BaseModel

from topomotion.utils.io import IOError, build_path, read_bytes, read_model_json, read_text, write_bytes, write_model


class SampleModel(BaseModel):
    """Sample Pydantic model for testing."""
    id: str
    name: str
    value: int | None = None


class TestBuildPath:
    """Tests for build_path function."""

    def test_join_paths(self):
        """Should join path components."""
        result = build_path("/base", "sub", "file.txt", make_dir=False)
        assert result == "/base/sub/file.txt"

    def test_creates_directory(self):
        """Should create parent directories when make_dir=True."""
        with tempfile.TemporaryDirectory() as tmp:
            path = build_path(tmp, "new_dir", "file.txt", make_dir=True)
            assert os.path.exists(os.path.dirname(path))

    def test_no_create_directory(self):
        """Should not create directories when make_dir=False."""
        with tempfile.TemporaryDirectory() as tmp:
            path = build_path(tmp, "nonexistent", "file.txt", make_dir=False)
            assert not os.path.exists(os.path.dirname(path))

    def test_bare_file_name(self):
        """Should accept a path with no directory part."""
        assert build_path("corpus.bin") == "corpus.bin"


class TestWriteBytes:
    """Tests for write_bytes function."""

    def test_round_trip(self, tmp_path):
        """Should write bytes that read back unchanged."""
        path = str(tmp_path / "blob.bin")
        write_bytes(b"\x00\x01topomotion", path)
        assert read_bytes(path) == b"\x00\x01topomotion"

    def test_replaces_existing(self, tmp_path):
        """Should overwrite and leave no temporary files behind."""
        path = str(tmp_path / "blob.bin")
        write_bytes(b"old", path)
        write_bytes(b"new", path)
        assert read_text(path) == "new"
        assert os.listdir(tmp_path) == ["blob.bin"]

    def test_missing_directory(self, tmp_path):
        """Should raise IOError when the parent directory does not exist."""
        with pytest.raises(IOError):
            write_bytes(b"data", str(tmp_path / "missing" / "blob.bin"))


class TestWriteModel:
    """Tests for write_model function."""

    def test_write_single_model(self, tmp_path):
        """Should write single model to JSON file."""
        path = str(tmp_path / "model.json")
        write_model(SampleModel(id="123", name="test", value=42), path)
        with open(path) as f:
            assert json.load(f) == {"id": "123", "name": "test", "value": 42}

    def test_write_model_list(self, tmp_path):
        """Should write list of models to JSON file."""
        path = str(tmp_path / "models.json")
        write_model([SampleModel(id="1", name="first"), SampleModel(id="2", name="second", value=100)], path)
        with open(path) as f:
            data = json.load(f)
        assert data == [
            {"id": "1", "name": "first", "value": None},
            {"id": "2", "name": "second", "value": 100},
        ]


class TestReadModelJson:
    """Tests for read_model_json function."""

    def test_read_dict(self, tmp_path):
        """Should read JSON object."""
        path = tmp_path / "data.json"
        path.write_text(json.dumps({"key": "value"}))
        assert read_model_json(str(path)) == {"key": "value"}

    def test_read_list(self, tmp_path):
        """Should read JSON array."""
        path = tmp_path / "data.json"
        path.write_text("[1, 2, 3]")
        assert read_model_json(str(path)) == [1, 2, 3]

    def test_file_not_found(self):
        """Should raise IOError for missing file."""
        with pytest.raises(IOError, match="File not found"):
            read_model_json("/nonexistent/path/file.json")

    def test_invalid_json(self, tmp_path):
        """Should raise ValueError for invalid JSON."""
        path = tmp_path / "bad.json"
        path.write_text("not valid json {")
        with pytest.raises(ValueError, match="Invalid JSON"):
            read_model_json(str(path))
