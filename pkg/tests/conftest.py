import pytest

from svsim.model import (AbrOptions, BandwidthSchedule, Layer, LayeredAsset, Link,
                         RateDistortionTable, Representation, ScenarioConfig,
                         SegmentedAsset, SingleRateAsset, Topology,
                         TransportOptions, validate_scenario)
from svsim.runner import bundled_scenario_path, load_scenario

RD = RateDistortionTable(nominal={"hi": 38.0, "mid": 33.0, "lo": 28.0}, floor=10.0)


def two_node_topology(capacity=1_000_000, delay=0.001, queue=10) -> Topology:
    return Topology(
        nodes=(1, 2),
        links=(Link(1, 2, capacity, delay, queue),),
        hosts={"client": 1, "server": 2},
    )


def mini_config(**overrides) -> ScenarioConfig:
    """Small all-methods scenario on a 2-node, 1-link network."""
    fields = dict(
        topology=two_node_topology(capacity=500_000),
        schedules=(BandwidthSchedule("1-2", ((5.0, 1_000_000.0),)),),
        assets={
            "h265": SingleRateAsset(90, 15.0, (176, 144), 400_000, "hi"),
            "dash": SegmentedAsset(
                90, 15.0, (176, 144),
                (Representation("lo", 100_000.0, "lo"),
                 Representation("hi", 400_000.0, "hi")),
                3.0, 2),
            "svc": LayeredAsset(
                90, 15.0, (176, 144),
                (Layer(0, 100_000.0, "lo"), Layer(1, 400_000.0, "hi"))),
        },
        transport=TransportOptions(mtu=1500, rto=0.5, startup_buffer=1.0,
                                   dash_window=4),
        abr=AbrOptions(),
        rd_table=RD,
        duration=20.0,
        replications=2,
        seed=7,
    )
    fields.update(overrides)
    return ScenarioConfig(**fields)


@pytest.fixture(scope="session")
def paper_config():
    return load_scenario(bundled_scenario_path())


@pytest.fixture()
def mini():
    return validate_scenario(mini_config())
