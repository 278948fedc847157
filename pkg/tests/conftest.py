import pytest

from nwndetect.dataio import SynthParams
from nwndetect.netgen import GenParams, generate_device
from nwndetect.pipeline import PipelineConfig

# Small device used across test modules: a 4x4 electrode grid gives 4 input
# and 12 readout electrodes, and 140 wires on a 60x60 um plane are dense
# enough that the electrode grid sits in one connected component.
SMALL_GEN = GenParams(wire_count=140, plane_size=(60.0, 60.0), grid_n=4,
                      seed=11)

# Pipeline settings matching the small device: 32px tiles pooled 16/16 give
# a 2x2 drive grid, i.e. the 4 input electrodes.
SMALL_PIPE = PipelineConfig(tile_size=32, pool_size=16, pool_stride=16,
                            threshold=0.05)

# Three-tile-by-two synthetic scene sized for SMALL_PIPE.
SMALL_SYNTH = SynthParams(dims=(64, 96), tile_size=32, hotspot_count=1,
                          radius_range=(4.0, 6.0), seed=3)


@pytest.fixture(scope="session")
def small_graph():
    return generate_device(SMALL_GEN)
