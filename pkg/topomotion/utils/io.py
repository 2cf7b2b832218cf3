"""File I/O helpers; every failure surfaces as topomotion's IOError."""
import json
import os
import tempfile
from collections.abc import Iterator, Sequence
from contextlib import contextmanager

from loguru import logger
from pydantic import BaseModel

from topomotion.exceptions import TopoMotionError


class IOError(TopoMotionError):
    """Raised when file I/O operations fail."""
    pass


@contextmanager
def _io_errors(action: str, path: str) -> Iterator[None]:
    try:
        yield
    except FileNotFoundError as e:
        raise IOError(f"File not found: '{path}'") from e
    except PermissionError as e:
        raise IOError(f"Permission denied {action} '{path}': {e}") from e
    except OSError as e:
        raise IOError(f"Failed {action} '{path}': {e}") from e


def build_path(*args: str, make_dir: bool = True) -> str:
    """
    Join path components and optionally create parent directories.

    :param args: Path components to join
    :param make_dir: If True, create parent directories (default True)
    :return: The joined path
    :raises IOError: If directory creation fails
    """
    path = os.path.join(*args)
    parent_dir = os.path.dirname(path)
    if make_dir and parent_dir:
        with _io_errors('creating directory', parent_dir):
            os.makedirs(parent_dir, exist_ok=True)
    return path


def write_bytes(data: bytes, path: str) -> None:
    """
    Write bytes through a temporary file in the same directory, then rename.

    A crash mid-write never leaves a truncated file at ``path``.

    :raises IOError: If the file cannot be written
    """
    directory = os.path.dirname(os.path.abspath(path))
    with _io_errors('writing to', path):
        fd, tmp = tempfile.mkstemp(dir=directory, prefix='.tmp-')
        try:
            with os.fdopen(fd, 'wb') as out:
                out.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    logger.debug(f"Wrote {len(data)} bytes to {path}")


def write_text(text: str, path: str) -> None:
    write_bytes(text.encode('utf-8'), path)


def write_model(model: BaseModel | Sequence[BaseModel], path: str) -> None:
    """
    Write a pydantic model, or a list of them, as indented JSON.

    :raises IOError: If the file cannot be written
    """
    if isinstance(model, Sequence) and not isinstance(model, BaseModel):
        payload = [m.model_dump(mode='json') for m in model]
    else:
        payload = model.model_dump(mode='json')
    write_text(json.dumps(payload, indent=2), path)


def read_bytes(path: str) -> bytes:
    with _io_errors('reading', path):
        with open(path, 'rb') as f:
            return f.read()


def read_text(path: str) -> str:
    return read_bytes(path).decode('utf-8')


def read_model_json(path: str) -> dict | list:
    """
    Read JSON data from a file.

    :raises IOError: If the file cannot be read
    :raises ValueError: If the content is not valid JSON
    """
    text = read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ValueError(f"Invalid JSON in '{path}': {e}") from e
