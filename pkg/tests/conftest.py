import pytest

from obext.geometry import parse_domain, rasterize
from obext.reflection import build_reflections, shells
from obext.whitney import PartitionOfUnity, decompose
from obext.extension import build_context


@pytest.fixture(scope="session")
def disk_grid():
    return rasterize(parse_domain("disk:1"), 0.02, 4.0)


@pytest.fixture(scope="session")
def square_grid():
    return rasterize(parse_domain("square:1"), 1.0 / 40.0, 3.0)


@pytest.fixture(scope="session")
def disk_pipeline(disk_grid):
    cover = decompose(disk_grid)
    pou = PartitionOfUnity(cover)
    rmap = build_reflections(cover, disk_grid, eps=0.25)
    shell_index = shells(cover, rmap, kmax=3)
    return build_context(disk_grid, cover, pou, rmap, shell_index)
