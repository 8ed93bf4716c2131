"""svsim: packet-level simulator for adaptive video delivery over an SDN."""

from .controller import RouteTable, bfs_distances, compute_route
from .kernel import Kernel, KernelStats
from .metrics import (FrameBuffer, frame_diff_map, ledger_psnr, loss_percentage,
                      mean_delay, mse, psnr, sequence_average_psnr,
                      throughput_series)
from .model import (AbrOptions, BandwidthSchedule, FlowRule, Layer, LayeredAsset,
                    Link, Manifest, Packet, RateDistortionTable, Representation,
                    ScenarioConfig, ScenarioError, SegmentedAsset,
                    SingleRateAsset, Topology, TransportOptions, nsfnet14,
                    validate_scenario)
from .network import NetworkPlane, transmission_time
from .runner import (RunReport, bundled_scenario_path, emit_report, load_scenario,
                     run_replications)
from .simulation import run_all_methods, run_method
from .streaming import (FrameOutcome, PlayoutBuffer, ThroughputEstimator,
                        ewma_update, packetize, select_layers,
                        select_representation)

__version__ = "0.1.0"
