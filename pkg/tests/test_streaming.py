import pytest
from hypothesis import given
from hypothesis import strategies as st

from svsim.controller import RouteTable
from svsim.kernel import Kernel, s_to_ns
from svsim.model import (AbrOptions, Layer, LayeredAsset, Link, Manifest, Packet,
                         Representation, SegmentedAsset, Topology,
                         TransportOptions)
from svsim.network import FlowSpec, NetworkPlane
from svsim.simulation import run_method
from svsim.streaming import (DashServer, DatagramReceiver, FlowEventLog,
                             PacketFactory, PlayoutBuffer,
                             SvcReceiver, SvcSender, ThroughputEstimator,
                             ewma_update, frame_bytes, media_time_ns, packetize,
                             select_layers, select_representation)

from conftest import mini_config

REPS = (Representation("crf40", 250_000.0, "crf40"),
        Representation("crf30", 750_000.0, "crf30"),
        Representation("crf20", 2_000_000.0, "crf20"))


# -- pure operations ------------------------------------------------------------

def test_packetize_division_with_remainder():
    assert packetize(3000, 1460) == [1460, 1460, 80]
    assert packetize(0, 1460) == []
    assert packetize(1460, 1460) == [1460]


@given(st.integers(0, 200_000), st.integers(16, 9000))
def test_packetize_sum_and_shape(total, payload):
    parts = packetize(total, payload)
    assert sum(parts) == total
    assert all(p == payload for p in parts[:-1])
    if parts:
        assert 0 < parts[-1] <= payload


def test_ewma_scalar_arithmetic():
    assert ewma_update(1000, 2000, 0.25) == 1250.0
    assert ewma_update(123, 456, 1.0) == 456.0
    assert ewma_update(123, 456, 0.0) == 123.0
    with pytest.raises(ValueError):
        ewma_update(1, 1, 1.5)
    with pytest.raises(ValueError):
        ewma_update(-1, 1, 0.5)


def test_select_representation_examples():
    # Floor rule: nothing fits under 0.9 x 100 Kbps.
    assert select_representation(100_000, REPS, 0.9).rep_id == "crf40"
    # 0.9 x 1000 Kbps = 900 Kbps: qualifying set is {250, 750}.
    assert select_representation(1_000_000, REPS, 0.9).rep_id == "crf30"
    # Saturation at the top.
    assert select_representation(10_000_000, REPS, 0.9).rep_id == "crf20"
    with pytest.raises(ValueError):
        select_representation(1.0, (), 0.9)


def test_select_layers_examples():
    cum = (250_000.0, 2_000_000.0)
    assert select_layers(400_000, cum) == 1   # 250 <= 400 < 2000
    assert select_layers(2_000_000, cum) == 2
    assert select_layers(0, cum) == 1         # base always sent
    with pytest.raises(ValueError):
        select_layers(100, ())


@given(st.floats(0, 1e9, allow_nan=False), st.floats(0.1, 2.0))
def test_select_representation_purity_and_floor(estimate, safety):
    a = select_representation(estimate, REPS, safety)
    b = select_representation(estimate, REPS, safety)
    assert a == b
    assert a.bitrate <= max(safety * estimate, REPS[0].bitrate)
    if a.rep_id != "crf40":
        assert a.bitrate <= safety * estimate


@given(st.floats(0, 1e9, allow_nan=False),
       st.lists(st.floats(1, 1e8), min_size=1, max_size=6, unique=True))
def test_select_layers_purity_and_floor(estimate, rates):
    cum = sorted(rates)
    a = select_layers(estimate, cum)
    assert a == select_layers(estimate, cum)
    assert 1 <= a <= len(cum)
    if a > 1:
        assert cum[a - 1] <= estimate
    if a < len(cum):
        assert cum[a] > estimate


def test_estimator_primes_then_smooths():
    est = ThroughputEstimator(0.8)
    assert not est.primed
    assert est.update(1000) == 1000
    assert est.update(2000) == pytest.approx(0.8 * 2000 + 0.2 * 1000)
    assert est.estimate >= 0


def test_frame_bytes_cumulative_pacing():
    total = sum(frame_bytes(1_500_000, 15.0, k) for k in range(1200))
    # 1200 frames at 15 fps = 80 s of media at 1.5 Mbps.
    assert abs(total - 1_500_000 * 80 / 8) <= 1
    assert media_time_ns(15, 15.0) == s_to_ns(1.0)


# -- playout buffer ---------------------------------------------------------------

def test_playout_all_data_before_start():
    buf = PlayoutBuffer(30, 15.0, 1.0)
    buf.on_frames_available(0, 29, s_to_ns(0.5), "hi")
    res = buf.finalize(s_to_ns(100))
    assert res.start_ns == s_to_ns(0.5)
    assert res.stalls == []
    assert all(o.timing == "on-time" and o.quality_id == "hi" for o in res.outcomes)


def test_playout_never_starts_when_below_threshold():
    buf = PlayoutBuffer(30, 15.0, 1.0)  # threshold 15 frames
    buf.on_frames_available(0, 5, s_to_ns(0.5), "hi")
    res = buf.finalize(s_to_ns(100))
    assert res.start_ns is None
    assert [o.timing for o in res.outcomes] == ["late"] * 6 + ["lost"] * 24


def test_playout_frame_10_half_second_late():
    # Hand trace: all frames land at 0.5 s except frame 10, which lands 0.5 s
    # after its deadline of 0.5 + 10/15. Playback freezes there and resumes
    # at frame 11's original deadline.
    buf = PlayoutBuffer(30, 15.0, 1.0)
    for k in range(30):
        if k != 10:
            buf.on_frames_available(k, k, s_to_ns(0.5), "hi")
    deadline_10 = 0.5 + 10 / 15
    buf.on_frames_available(10, 10, s_to_ns(deadline_10 + 0.5), "hi")
    res = buf.finalize(s_to_ns(100))
    assert res.start_ns == s_to_ns(0.5)
    assert res.outcomes[10].timing == "late"
    assert res.outcomes[10].quality_id is None
    assert res.outcomes[9].timing == "on-time"
    assert res.outcomes[11].timing == "on-time"
    assert len(res.stalls) == 1
    assert res.stalls[0] == (s_to_ns(deadline_10), 10)


def test_playout_upgrade_completion_wins_when_on_time():
    buf = PlayoutBuffer(2, 1.0, 0.0)
    buf.on_frames_available(0, 1, 1000, "lo")
    buf.on_frames_available(0, 0, 1000, "hi")  # enhancement met the deadline too
    res = buf.finalize(s_to_ns(10))
    assert res.outcomes[0].quality_id == "hi"
    assert res.outcomes[1].quality_id == "lo"


def test_datagram_receiver_requires_lower_layers():
    buf = PlayoutBuffer(1, 1.0, 0.0)
    rx = DatagramReceiver(buf, layer_count=2)
    enh = Packet(1, 1, 140, 0, tags={"kind": "data", "unit": ("frame", 0, 1),
                                     "seq": 0, "unit_bytes": 100, "quality": "hi",
                                     "frame": 0})
    rx.on_deliver(enh, 500)
    assert buf.completions[0] == []  # enhancement alone is not decodable
    base = Packet(2, 1, 140, 0, tags={"kind": "data", "unit": ("frame", 0, 0),
                                      "seq": 0, "unit_bytes": 100, "quality": "lo",
                                      "frame": 0})
    rx.on_deliver(base, 900)
    assert [q for _, q in buf.completions[0]] == ["lo", "hi"]


# -- endpoint harness ---------------------------------------------------------------

def make_stack(capacity=500_000, queue=50, mtu=1500):
    topo = Topology((1, 2), (Link(1, 2, capacity, 0.001, queue),),
                    {"client": 2, "server": 1})
    kernel = Kernel()
    table = RouteTable(topo)
    table.install_bidirectional_rules([1, 2], 1, 2)
    plane = NetworkPlane(kernel, topo, table, mtu)
    return kernel, plane, PacketFactory(mtu), FlowEventLog("test")


def test_dash_segment_index_out_of_range():
    kernel, plane, factory, events = make_stack()
    asset = SegmentedAsset(90, 15.0, (176, 144), REPS[:1], 3.0, 2)
    server = DashServer(kernel, plane, factory, events, 1, 1,
                        Manifest.from_asset(asset), asset, window=4)
    req = Packet(1, 2, 100, 0, tags={"kind": "segment_req", "segment": 5,
                                     "rep": "crf40"})
    with pytest.raises(ValueError, match="out of range"):
        server.on_packet(req, 0)


def test_svc_dispersion_estimate_tracks_capacity():
    kernel, plane, factory, events = make_stack(capacity=500_000)
    asset = LayeredAsset(60, 15.0, (176, 144),
                         (Layer(0, 100_000.0, "lo"), Layer(1, 400_000.0, "hi")))
    abr = AbrOptions(ewma_alpha=0.8, safety_factor=0.9, svc_feedback_interval=0.5)
    sender = SvcSender(kernel, plane, factory, events, 1, 1, asset, abr, 0)
    playout = PlayoutBuffer(60, 15.0, 0.5)
    receiver = SvcReceiver(playout, sender, 2, 2, 0.5, 0, s_to_ns(4.0),
                           layer_count=2)
    plane.register_flow(FlowSpec(1, 1, 2, receiver.on_deliver))
    plane.register_flow(FlowSpec(2, 2, 1, sender.on_feedback))
    kernel.run_until_s(4.0)
    # Packet-pair dispersion reveals the 500 Kbps bottleneck even though the
    # base layer only offers 100 Kbps.
    assert sender.estimator.primed
    assert sender.estimator.estimate == pytest.approx(500_000, rel=0.05)
    # 400 Kbps cumulative fits under the 500 Kbps estimate: both layers flow.
    assert sender.layer_count == 2


def test_svc_base_layer_sent_for_every_frame(mini):
    res = run_method(mini, "svc", seed=3)
    assert len(res.layers_per_frame) == mini.assets["svc"].frame_count
    assert min(res.layers_per_frame) >= 1


def test_svc_pinned_low_estimate_keeps_base_only():
    kernel, plane, factory, events = make_stack(capacity=120_000)
    asset = LayeredAsset(45, 15.0, (176, 144),
                         (Layer(0, 100_000.0, "lo"), Layer(1, 400_000.0, "hi")))
    abr = AbrOptions(svc_feedback_interval=0.5)
    sender = SvcSender(kernel, plane, factory, events, 1, 1, asset, abr, 0)
    playout = PlayoutBuffer(45, 15.0, 0.5)
    receiver = SvcReceiver(playout, sender, 2, 2, 0.5, 0, s_to_ns(3.0),
                           layer_count=2)
    plane.register_flow(FlowSpec(1, 1, 2, receiver.on_deliver))
    plane.register_flow(FlowSpec(2, 2, 1, sender.on_feedback))
    kernel.run_until_s(3.0)
    # select_layers(~120 Kbps, {100k, 400k}) = 1 for the whole run.
    assert sender.layer_count == 1
    assert set(res for res in sender.sent_layers_per_frame) == {1}


def test_cbr_total_bytes_matches_pacing_contract(mini):
    res = run_method(mini, "h265", seed=1)
    asset = mini.assets["h265"]
    media_payload = sum(size - 40 for _, fid, size, _, _, _ in res.packet_rows
                        if fid == 1)
    expected = asset.bitrate * asset.frame_count / asset.frame_rate / 8
    assert abs(media_payload - expected) <= 1500


def test_cbr_under_capacity_has_zero_drops(mini):
    # 400 Kbps asset over a 500 Kbps link.
    res = run_method(mini, "h265", seed=1)
    assert res.lost == 0
    assert res.mean_psnr_db == pytest.approx(38.0)


def test_cbr_overload_fills_queue_and_drops():
    cfg = mini_config()
    cfg = cfg.__class__(**{**cfg.__dict__,
                           "assets": {"h265": cfg.assets["h265"].__class__(
                               90, 15.0, (176, 144), 2_000_000.0, "hi")},
                           "validated": False})
    from svsim.model import validate_scenario
    res = run_method(validate_scenario(cfg), "h265", seed=1)
    # Offered load 2 Mbps against a 500 Kbps then 1 Mbps link.
    assert res.lost > 0
    assert res.mean_psnr_db < 38.0


def test_dash_cold_start_requests_lowest(mini):
    res = run_method(mini, "dash", seed=2)
    assert res.request_log[0][2] == "lo"
    assert [seg for _, seg, _ in res.request_log] == [0, 1]


def test_dash_measured_throughput_example():
    # 0.9 x 1.8 Mbps = 1.62 Mbps -> highest fitting representation is 750 Kbps.
    est = ThroughputEstimator(0.8)
    est.update(1_800_000)
    rep = select_representation(est.estimate, REPS, 0.9)
    assert rep.rep_id == "crf30"


def test_dash_reliable_delivery_recovers_from_drops():
    # Queue of 2 and a window of 8 force tail drops on the first burst; the
    # idle timeout re-requests the missing packets until the segment lands.
    cfg = mini_config(
        topology=Topology((1, 2), (Link(1, 2, 500_000.0, 0.001, 2),),
                          {"client": 1, "server": 2}),
        transport=TransportOptions(mtu=1500, rto=0.4, startup_buffer=1.0,
                                   dash_window=8),
        schedules=(),
        duration=40.0,
    )
    from svsim.model import validate_scenario
    res = run_method(validate_scenario(cfg), "dash", seed=5)
    assert res.lost > 0  # link really dropped media packets
    events = {e for _, _, e, _ in res.events}
    assert "re_request" in events
    # Application-level reliability: every segment completed regardless.
    completed = [d for _, _, e, d in res.events if e == "segment_complete"]
    assert len(completed) == 2
    assert all(o.timing == "on-time" for o in res.outcomes)


def test_dash_retransmissions_are_tagged():
    from svsim.streaming import DashClient
    kernel, plane, factory, events = make_stack(capacity=500_000, queue=2)
    asset = SegmentedAsset(90, 15.0, (176, 144),
                           (Representation("lo", 100_000.0, "lo"),
                            Representation("hi", 400_000.0, "hi")), 3.0, 2)
    manifest = Manifest.from_asset(asset)
    transport = TransportOptions(mtu=1500, rto=0.4, startup_buffer=1.0,
                                 dash_window=8)
    playout = PlayoutBuffer(90, 15.0, 1.0)
    server = DashServer(kernel, plane, factory, events, 1, 1, manifest, asset,
                        transport.dash_window)
    client = DashClient(kernel, plane, factory, events, 2, 1, 2, manifest, asset,
                        AbrOptions(), transport, playout, 0)
    plane.register_flow(FlowSpec(1, 1, 2, client.on_deliver))
    plane.register_flow(FlowSpec(2, 2, 1, server.on_packet))
    kernel.run_until_s(40.0)
    retrans = [row[0] for row in plane.delivery_log if row[0].retransmission]
    assert retrans, "tail drops should have forced tagged retransmissions"
    assert all(p.tags["kind"] == "data" for p in retrans)
    assert client.state == "done"


def test_dash_selected_bitrate_monotone_in_capacity():
    base = mini_config(schedules=(), duration=30.0)
    faster = mini_config(
        topology=Topology((1, 2), (Link(1, 2, 1_000_000.0, 0.001, 10),),
                          {"client": 1, "server": 2}),
        schedules=(), duration=30.0)
    from svsim.model import validate_scenario
    lo = run_method(validate_scenario(base), "dash", seed=4)
    hi = run_method(validate_scenario(faster), "dash", seed=4)
    rates = {"lo": 100_000, "hi": 400_000}
    lo_rates = [rates[r] for _, _, r in lo.request_log]
    hi_rates = [rates[r] for _, _, r in hi.request_log]
    assert len(lo_rates) == len(hi_rates) == 2
    assert all(h >= l for h, l in zip(hi_rates, lo_rates))
