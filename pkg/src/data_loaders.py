import io
import logging
from abc import ABC, abstractmethod
from pathlib import Path

import numpy as np

from artifacts import atomic_write_bytes
from exceptions import CorruptFile, UnsupportedFormat

BINARY_MAGIC = b"CSLEVEL1"
BINARY_HEADER = len(BINARY_MAGIC) + 8
COMPLEX_HEADER = "# columns: re,im"


class BaseDataLoader(ABC):
    """Abstract base class for all vector, matrix and image formats."""
    @abstractmethod
    def decode(self, data: bytes) -> np.ndarray:
        """Parses the raw file contents."""
        pass

    @abstractmethod
    def encode(self, array: np.ndarray) -> bytes:
        pass

    def load(self, path: str | Path) -> np.ndarray:
        path = Path(path)
        logging.info(f"Loading {path} with {type(self).__name__}")
        try:
            data = path.read_bytes()
        except OSError as e:
            raise CorruptFile(f"Cannot read '{path}': {e}") from e
        return self.decode(data)

    def save(self, path: str | Path, array) -> Path:
        return atomic_write_bytes(path, self.encode(np.asarray(array)))


class CsvLoader(BaseDataLoader):
    """
    Comma separated numbers, one matrix row per line; '#' lines are comments.
    A leading '# columns: re,im' line marks complex data stored as pairs.
    One column reads as a vector.
    """
    def decode(self, data: bytes) -> np.ndarray:
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise CorruptFile(f"CSV is not valid UTF-8: {e}") from e
        lines = [line.strip() for line in text.splitlines()]
        pairs = any(line == COMPLEX_HEADER for line in lines)
        rows = [line for line in lines if line and not line.startswith("#")]
        if not rows:
            raise CorruptFile("CSV holds no data rows")
        try:
            values = [[float(cell) for cell in row.split(",")] for row in rows]
        except ValueError as e:
            raise CorruptFile(f"CSV cell is not a number: {e}") from e
        if len({len(r) for r in values}) != 1:
            raise CorruptFile("CSV rows have different lengths")
        array = np.array(values)
        if pairs:
            if array.shape[1] % 2:
                raise CorruptFile("Complex CSV needs an even number of columns")
            array = array[:, 0::2] + 1j * array[:, 1::2]
        return array[:, 0] if array.shape[1] == 1 else array

    def encode(self, array: np.ndarray) -> bytes:
        matrix = array.reshape(-1, 1) if array.ndim == 1 else array
        out = io.StringIO()
        if np.iscomplexobj(matrix):
            out.write(COMPLEX_HEADER + "\n")
            matrix = np.stack([matrix.real, matrix.imag], axis=2).reshape(matrix.shape[0], -1)
        for row in matrix:
            out.write(",".join(repr(float(v)) for v in row) + "\n")
        return out.getvalue().encode("utf-8")


class BinaryLoader(BaseDataLoader):
    """
    8-byte magic, uint32 LE rows, uint32 LE columns, then little-endian float64
    (re, im) pairs in row-major order. One column reads as a vector; all-zero
    imaginary parts read as real.
    """
    def decode(self, data: bytes) -> np.ndarray:
        if len(data) < BINARY_HEADER or data[: len(BINARY_MAGIC)] != BINARY_MAGIC:
            raise CorruptFile("Missing binary matrix header")
        rows, cols = (int(v) for v in np.frombuffer(data, dtype="<u4", count=2, offset=len(BINARY_MAGIC)))
        expected = BINARY_HEADER + rows * cols * 16
        if len(data) != expected:
            raise CorruptFile(f"Binary matrix {rows}x{cols} needs {expected} bytes, got {len(data)}")
        flat = np.frombuffer(data, dtype="<f8", offset=BINARY_HEADER).reshape(rows, cols, 2)
        array = flat[..., 0] + 1j * flat[..., 1]
        if not np.any(flat[..., 1]):
            array = flat[..., 0].astype(np.float64)
        return array[:, 0] if cols == 1 else array

    def encode(self, array: np.ndarray) -> bytes:
        matrix = array.reshape(-1, 1) if array.ndim == 1 else array
        pairs = np.stack([matrix.real, np.imag(matrix)], axis=2).astype("<f8")
        header = BINARY_MAGIC + np.array(matrix.shape, dtype="<u4").tobytes()
        return header + pairs.tobytes()


class PgmLoader(BaseDataLoader):
    """Binary greyscale PGM (P5), 8 or 16 bit big-endian samples, scaled to [0, 1] and flattened row-major."""
    def _parse_header(self, data: bytes) -> tuple[int, int, int, int]:
        tokens, pos = [], 2
        if data[:2] != b"P5":
            raise UnsupportedFormat("Only binary greyscale PGM (P5) images are supported")
        while len(tokens) < 3:
            while pos < len(data) and data[pos : pos + 1].isspace():
                pos += 1
            if data[pos : pos + 1] == b"#":
                while pos < len(data) and data[pos : pos + 1] != b"\n":
                    pos += 1
                continue
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace():
                pos += 1
            if start == pos:
                raise CorruptFile("Truncated PGM header")
            try:
                tokens.append(int(data[start:pos]))
            except ValueError as e:
                raise CorruptFile(f"Bad PGM header field {data[start:pos]!r}") from e
        width, height, maxval = tokens
        if not 0 < maxval < 65536 or width <= 0 or height <= 0:
            raise CorruptFile(f"Bad PGM header: {width}x{height}, maxval {maxval}")
        # Exactly one whitespace byte separates the header from the raster.
        return width, height, maxval, pos + 1

    def decode_image(self, data: bytes) -> np.ndarray:
        width, height, maxval, offset = self._parse_header(data)
        dtype = ">u1" if maxval < 256 else ">u2"
        count = width * height
        if len(data) - offset < count * np.dtype(dtype).itemsize:
            raise CorruptFile(f"PGM raster shorter than {width}x{height}")
        raster = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        return (raster.astype(float) / maxval).reshape(height, width)

    def decode(self, data: bytes) -> np.ndarray:
        return self.decode_image(data).ravel()

    def load_image(self, path: str | Path) -> np.ndarray:
        return self.decode_image(Path(path).read_bytes())

    def encode(self, array: np.ndarray) -> bytes:
        """Writes a 2-D array (values clipped to [0, 1]) as a 16-bit PGM."""
        if array.ndim != 2:
            raise UnsupportedFormat(f"PGM images must be 2-D, got shape {array.shape}")
        image = np.clip(np.abs(array) if np.iscomplexobj(array) else array, 0.0, 1.0)
        raster = np.rint(image * 65535).astype(">u2")
        height, width = image.shape
        return f"P5\n{width} {height}\n65535\n".encode("ascii") + raster.tobytes()


LOADERS = {".csv": CsvLoader, ".bin": BinaryLoader, ".pgm": PgmLoader}


def get_data_loader(path: str | Path) -> BaseDataLoader:
    """
    Factory function that picks the loader from the file extension.
    """
    suffix = Path(path).suffix.lower()
    if suffix not in LOADERS:
        raise UnsupportedFormat(f"No loader for '{suffix}' files; supported: {', '.join(LOADERS)}")
    return LOADERS[suffix]()


def ingest(path: str | Path) -> np.ndarray:
    """Reads a vector, matrix or flattened image from a CSV, binary or PGM file."""
    path = Path(path)
    if not path.exists():
        raise CorruptFile(f"File not found: '{path}'")
    return get_data_loader(path).load(path)
