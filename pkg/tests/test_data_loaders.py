import numpy as np
import pytest

from data_loaders import BinaryLoader, CsvLoader, PgmLoader, get_data_loader, ingest
from exceptions import CorruptFile, UnsupportedFormat


def test_csv_identity_matrix(tmp_path):
    # Arrange
    path = tmp_path / "identity.csv"
    path.write_text("1,0\n0,1\n")

    # Act
    A = ingest(path)

    # Assert
    np.testing.assert_array_equal(A, np.eye(2))


def test_csv_single_column_reads_as_vector():
    x = CsvLoader().decode(b"# a comment\n1.5\n-2\n")
    assert x.shape == (2,)
    np.testing.assert_array_equal(x, [1.5, -2.0])


def test_csv_complex_pairs():
    # Arrange
    data = b"# columns: re,im\n1,2,0,-1\n3,0,4,5\n"

    # Act
    A = CsvLoader().decode(data)

    # Assert
    np.testing.assert_array_equal(A, [[1 + 2j, -1j], [3, 4 + 5j]])


@pytest.mark.parametrize(
    "data",
    [b"", b"1,2\n3\n", b"1,x\n", b"# columns: re,im\n1,2,3\n", b"\xff\xfe"],
)
def test_csv_corrupt(data):
    with pytest.raises(CorruptFile):
        CsvLoader().decode(data)


def test_csv_encode_keeps_complex_values():
    A = np.array([[1 + 1j, 2.5], [0, -3j]])
    np.testing.assert_array_equal(CsvLoader().decode(CsvLoader().encode(A)), A)


def test_binary_round_trip(tmp_path):
    # Arrange
    A = np.array([[1.0, -2.0, 0.5], [0.0, 3.0, 1e-300]])
    loader = BinaryLoader()

    # Act
    path = loader.save(tmp_path / "A.bin", A)
    B = ingest(path)

    # Assert
    assert not np.iscomplexobj(B)
    np.testing.assert_array_equal(A, B)


def test_binary_rejects_truncated_data():
    data = BinaryLoader().encode(np.ones((2, 2)))
    with pytest.raises(CorruptFile):
        BinaryLoader().decode(data[:-1])
    with pytest.raises(CorruptFile):
        BinaryLoader().decode(b"NOTMAGIC" + data[8:])


def test_pgm_scales_to_unit_interval(tmp_path):
    # Arrange
    path = tmp_path / "tiny.pgm"
    path.write_bytes(b"P5\n# made by hand\n2 2\n255\n" + bytes([0, 255, 255, 0]))

    # Act
    x = ingest(path)
    image = PgmLoader().load_image(path)

    # Assert
    np.testing.assert_array_equal(x, [0.0, 1.0, 1.0, 0.0])
    assert image.shape == (2, 2)


def test_pgm_phantom_dataset():
    image = PgmLoader().load_image("datasets/phantom32.pgm")
    assert image.shape == (32, 32)
    assert 0.0 <= image.min() and image.max() <= 1.0


def test_pgm_rejects_ascii_and_short_raster():
    with pytest.raises(UnsupportedFormat):
        PgmLoader().decode(b"P2\n2 2\n255\n0 1 2 3\n")
    with pytest.raises(CorruptFile):
        PgmLoader().decode(b"P5\n2 2\n255\n" + bytes([0, 1]))


def test_get_data_loader_factory():
    """
    Tests that the factory picks the loader from the file extension.
    """
    assert isinstance(get_data_loader("a.CSV"), CsvLoader)
    assert isinstance(get_data_loader("a.bin"), BinaryLoader)
    assert isinstance(get_data_loader("a.pgm"), PgmLoader)
    with pytest.raises(UnsupportedFormat):
        get_data_loader("a.png")


def test_ingest_missing_file(tmp_path):
    with pytest.raises(CorruptFile):
        ingest(tmp_path / "missing.csv")
