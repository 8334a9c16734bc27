"""Cycle accounting for the pipelined datapath of one quantized student."""

import json
import math
from dataclasses import asdict, dataclass, field

MUL_CYCLES = 4        # 4-stage multiply pipeline
NORM_CYCLES = 2       # subtract + shift
RELU_CYCLES = 1       # model assumption
DECISION_CYCLES = 1   # model assumption

# Per-component latencies of the published FPGA design, column "Latency (ns)".
# 32 units cannot be both ns and cycles at 100 MHz, so these are only echoed.
REFERENCE = {
    "FNN-A": {"MF": 11, "AVG&NORM": 9, "Network": 12, "total": 32},
    "FNN-B": {"MF": 11, "AVG&NORM": 6, "Network": 15, "total": 32},
}
REFERENCE_NOTE = "reference, unit-ambiguous (labelled ns; 100 MHz clock)"


def adder_tree_cycles(n_terms: int) -> int:
    """``ceil(log2(n)) + 1`` cycles to reduce ``n`` terms."""
    if n_terms < 1:
        raise ValueError("adder tree needs at least one term")
    return math.ceil(math.log2(n_terms)) + 1


@dataclass
class StageLatency:
    name: str
    cycles: int
    group: str
    note: str = ""


@dataclass
class LatencyReport:
    stages: list
    clock_mhz: float
    architecture: str = ""
    reference: dict = field(default_factory=dict)
    reference_note: str = REFERENCE_NOTE

    @property
    def total_cycles(self) -> int:
        return sum(s.cycles for s in self.stages)

    @property
    def total_ns(self) -> float:
        return self.total_cycles * 1000.0 / self.clock_mhz

    def group_cycles(self) -> dict:
        out = {}
        for s in self.stages:
            out[s.group] = out.get(s.group, 0) + s.cycles
        return out

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "clock_mhz": self.clock_mhz,
            "stages": [asdict(s) for s in self.stages],
            "groups": self.group_cycles(),
            "total_cycles": self.total_cycles,
            "total_ns": self.total_ns,
            "reference": self.reference,
            "reference_note": self.reference_note,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        ns = 1000.0 / self.clock_mhz
        rows = [f"{'stage':<12}{'group':<10}{'cycles':>7}{'ns':>9}  note"]
        for s in self.stages:
            rows.append(f"{s.name:<12}{s.group:<10}{s.cycles:>7}{s.cycles * ns:>9.1f}  {s.note}")
        rows.append(f"{'total':<22}{self.total_cycles:>7}{self.total_ns:>9.1f}")
        if self.reference:
            rows.append("")
            rows.append(f"published per-component figures ({self.reference_note}):")
            model = self.group_cycles()
            for k, v in self.reference.items():
                mine = self.total_cycles if k == "total" else model.get(k, "-")
                rows.append(f"  {k:<10} published {v:>4}   model cycles {mine}")
        return "\n".join(rows)


def _architecture(qnet) -> str:
    if qnet.spec.input_dim == 31:
        return "FNN-A"
    if qnet.spec.input_dim == 201:
        return "FNN-B"
    return f"custom-{qnet.spec.input_dim}"


def latency_report(qnet, clock_mhz: float = 100.0) -> LatencyReport:
    """Per-stage cycles for ``qnet``; the total is the plain sum of stages."""
    if not clock_mhz > 0:
        raise ValueError("clock_mhz must be > 0")
    stages = [
        StageLatency("avg_sum", adder_tree_cycles(qnet.window), "AVG&NORM",
                     f"adder tree over W={qnet.window}"),
        StageLatency("avg_scale", MUL_CYCLES, "AVG&NORM", "multiply by 1/W"),
        StageLatency("norm", NORM_CYCLES, "AVG&NORM", "subtract x_min, shift"),
        StageLatency("mf_mul", MUL_CYCLES, "MF", "multiply pipeline"),
        StageLatency("mf_sum", adder_tree_cycles(2 * qnet.n_samples), "MF",
                     f"adder tree over 2S={2 * qnet.n_samples}"),
    ]
    last = len(qnet.spec.layer_shapes) - 1
    for k, (_, n_in) in enumerate(qnet.spec.layer_shapes):
        stages.append(StageLatency(f"fc{k}_mul", MUL_CYCLES, "Network", "multiply pipeline"))
        stages.append(StageLatency(f"fc{k}_sum", adder_tree_cycles(n_in + 1), "Network",
                                   f"adder tree over {n_in} products + bias"))
        if k != last:
            stages.append(StageLatency(f"relu{k}", RELU_CYCLES, "Network", "model assumption"))
    stages.append(StageLatency("decision", DECISION_CYCLES, "Network", "model assumption"))
    arch = _architecture(qnet)
    return LatencyReport(stages, clock_mhz, arch, dict(REFERENCE.get(arch, {})))
