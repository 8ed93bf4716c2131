import math

import pytest

from svsim.model import (BandwidthSchedule, Layer, LayeredAsset, Link, Manifest,
                         Packet, Representation, ScenarioError, SegmentedAsset,
                         SingleRateAsset, Topology, TransportOptions, nsfnet14,
                         segment_bytes, validate_scenario)

from conftest import mini_config, two_node_topology


def test_bundled_nsfnet_has_14_nodes_21_links():
    nodes, edges = nsfnet14()
    assert len(nodes) == 14
    assert len(edges) == 21
    assert all(1 <= a <= 14 and 1 <= b <= 14 for a, b in edges)


def test_bundled_scenario_valid(paper_config):
    assert paper_config.validated
    client = paper_config.topology.hosts["client"]
    access = [l for l in paper_config.topology.links
              if client in (l.a, l.b)]
    assert len(access) == 1
    assert access[0].capacity == 400_000  # initial client-link capacity


def test_validation_idempotent(mini):
    again = validate_scenario(mini)
    assert again == mini


def test_segment_arithmetic_identity():
    # 8 segments x 10 s x 15 fps = 1200 frames, checked by independent multiply.
    assert 8 * 10 * 15 == 1200
    asset = SegmentedAsset(1200, 15.0, (352, 288),
                           (Representation("lo", 250_000.0, "lo"),),
                           10.0, 8)
    cfg = mini_config(assets={"dash": asset})
    validated = validate_scenario(cfg)
    assert validated.assets["dash"].frame_count == 1200


def test_zero_capacity_schedule_event_rejected():
    cfg = mini_config(schedules=(BandwidthSchedule("1-2", ((5.0, 0.0),)),))
    with pytest.raises(ScenarioError) as exc:
        validate_scenario(cfg)
    assert any("capacity must be positive" in v for v in exc.value.violations)


MUTATIONS = [
    ("unknown schedule link",
     dict(schedules=(BandwidthSchedule("9-9", ((1.0, 5.0),)),)),
     "unknown link"),
    ("non-increasing schedule times",
     dict(schedules=(BandwidthSchedule("1-2", ((5.0, 10.0), (5.0, 20.0))),)),
     "strictly increasing"),
    ("segment arithmetic mismatch",
     dict(assets={"dash": SegmentedAsset(
         91, 15.0, (176, 144), (Representation("lo", 1000.0, "lo"),), 3.0, 2)}),
     "segment arithmetic mismatch"),
    ("duplicate representation bitrates",
     dict(assets={"dash": SegmentedAsset(
         90, 15.0, (176, 144),
         (Representation("a", 1000.0, "lo"), Representation("b", 1000.0, "lo")),
         3.0, 2)}),
     "pairwise distinct"),
    ("non-increasing layer rates",
     dict(assets={"svc": LayeredAsset(
         90, 15.0, (176, 144),
         (Layer(0, 5000.0, "lo"), Layer(1, 5000.0, "hi")))}),
     "strictly increasing"),
    ("negative frame count",
     dict(assets={"h265": SingleRateAsset(0, 15.0, (176, 144), 1000.0, "hi")}),
     "frame count must be positive"),
    ("duration below last schedule event",
     dict(duration=2.0),
     "does not cover"),
    ("zero replications",
     dict(replications=0),
     "replications must be >= 1"),
    ("alpha out of range",
     dict(abr=__import__("svsim.model", fromlist=["AbrOptions"]).AbrOptions(
         ewma_alpha=1.5)),
     "alpha must be in"),
    ("tiny mtu",
     dict(transport=TransportOptions(mtu=40)),
     "MTU must exceed"),
]


@pytest.mark.parametrize("label,overrides,expect", MUTATIONS,
                         ids=[m[0] for m in MUTATIONS])
def test_each_mutation_reports_its_violation(label, overrides, expect):
    cfg = mini_config(**overrides)
    with pytest.raises(ScenarioError) as exc:
        validate_scenario(cfg)
    assert any(expect in v for v in exc.value.violations), exc.value.violations


def test_topology_violations_collected():
    topo = Topology(nodes=(1, 2, 3),
                    links=(Link(1, 1, 0.0, 0.001, 0),),
                    hosts={"client": 1, "server": 1})
    cfg = mini_config(topology=topo, schedules=())
    with pytest.raises(ScenarioError) as exc:
        validate_scenario(cfg)
    text = " | ".join(exc.value.violations)
    assert "endpoints must be distinct" in text
    assert "capacity must be positive" in text
    assert "queue capacity" in text
    assert "client and server must be distinct" in text


def test_disconnected_graph_rejected():
    topo = Topology(nodes=(1, 2, 3), links=(Link(1, 2, 1000.0, 0.0, 5),),
                    hosts={"client": 1, "server": 2})
    with pytest.raises(ScenarioError) as exc:
        validate_scenario(mini_config(topology=topo, schedules=()))
    assert any("not connected" in v for v in exc.value.violations)


def test_manifest_segment_sizes_round_up():
    asset = SegmentedAsset(90, 15.0, (176, 144),
                           (Representation("lo", 100_001.0, "lo"),), 3.0, 2)
    manifest = Manifest.from_asset(asset)
    expected = math.ceil(100_001.0 * 3.0 / 8)
    assert manifest.sizes[("lo", 0)] == expected
    assert manifest.sizes[("lo", 1)] == expected
    assert segment_bytes(250_000, 10.0) == 312_500


def test_packet_requires_payload():
    with pytest.raises(ValueError):
        Packet(1, 1, 40, 0)
    pkt = Packet(1, 1, 1500, 0)
    assert pkt.payload == 1460


def test_rd_table_lookup_unknown_quality():
    cfg = mini_config()
    with pytest.raises(KeyError):
        cfg.rd_table.psnr_for("nope")


def test_topology_helpers():
    topo = two_node_topology()
    assert topo.neighbors(1) == [2]
    assert topo.link_between(2, 1).id == "1-2"
    assert topo.link_between(1, 1) is None
