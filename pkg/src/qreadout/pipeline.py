"""End-to-end stages: generate, fit preprocessing, train, distill, quantize, evaluate.

Each stage reads and writes only the binary/JSON artifact formats, so stages
can run as separate processes.  All outputs are pure functions of the config.
"""

import datetime
import hashlib
import json
import logging
import platform
from pathlib import Path

import numpy as np

import qreadout
from qreadout import dataset, evaluation, fxp, latency, nn, preprocess
from qreadout.distill import DistillBatchView, teacher_logits, train_student

log = logging.getLogger(__name__)


class MissingArtifact(FileNotFoundError):
    def __init__(self, path, producer):
        super().__init__(f"missing {path}; run the `{producer}` subcommand first")
        self.path = path
        self.producer = producer


def _dur(d) -> str:
    return f"{d:g}ns"


def _dump(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Pipeline:
    """Artifact layout and stage runners for one :class:`~qreadout.config.RunConfig`."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.root = Path(cfg.artifacts)
        self._data = None
        self._teacher_logits = {}

    # layout -------------------------------------------------------------

    @property
    def train_path(self):
        return Path(self.cfg.dataset_dir) / "train.qtrc"

    @property
    def test_path(self):
        return Path(self.cfg.dataset_dir) / "test.qtrc"

    def pre_path(self, q, d):
        return self.root / "preprocess" / f"q{q}_{_dur(d)}.qpre"

    def teacher_path(self, q):
        return self.root / "teachers" / f"q{q}.qnnf"

    def student_path(self, q, d, with_mf=True):
        return self.root / "students" / f"q{q}_{_dur(d)}{'' if with_mf else '_nomf'}.qnnf"

    def quant_path(self, q, d):
        return self.root / "quantized" / f"q{q}_{_dur(d)}.qnnq"

    def report_path(self, name):
        return Path(self.cfg.reports) / name

    def manifest(self, stage, outputs, extra=None):
        """Provenance record; the only artifact carrying a timestamp."""
        body = {
            "stage": stage,
            "config_hash": self.cfg.config_hash(),
            "seeds": self.cfg.seeds(),
            "versions": {"qreadout": qreadout.__version__, "numpy": np.__version__,
                         "python": platform.python_version()},
            "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "outputs": {str(Path(p).relative_to(self.root)) if Path(p).is_relative_to(self.root)
                        else str(p): _sha256(Path(p)) for p in outputs},
        }
        body.update(extra or {})
        _dump(self.root / "manifests" / f"{stage}.json", body)

    # loading ------------------------------------------------------------

    def _need(self, path, producer):
        if not Path(path).exists():
            raise MissingArtifact(path, producer)
        return path

    def data(self):
        if self._data is None:
            train = dataset.load_traces(self._need(self.train_path, "generate"))
            test = dataset.load_traces(self._need(self.test_path, "generate"))
            self._data = (train, test)
        return self._data

    def preprocessor(self, q, d):
        return preprocess.load_preprocessor(self._need(self.pre_path(q, d), "train-mf"))

    def teacher(self, q):
        return nn.load_network(self._need(self.teacher_path(q), "train-teacher"))

    def student(self, q, d, with_mf=True):
        return nn.load_network(self._need(self.student_path(q, d, with_mf), "distill"))

    def quantized(self, q, d):
        return fxp.load_quant(self._need(self.quant_path(q, d), "quantize"))

    def averaging(self, q, n_samples):
        return self.cfg.arch_for(q).averaging(n_samples, self.cfg.reference_samples)

    def _qubits(self, qubits):
        qs = range(self.cfg.n_qubits) if qubits is None else qubits
        for q in qs:
            if not 0 <= q < self.cfg.n_qubits:
                raise ValueError(f"qubit {q} out of range 0..{self.cfg.n_qubits - 1}")
        return list(qs)

    def _durations(self, durations):
        return list(self.cfg.durations_ns if durations is None else durations)

    def reference_view(self, ts):
        return dataset.slice_duration(ts, self.cfg.reference_duration_ns)

    # stages -------------------------------------------------------------

    def generate(self):
        ts = dataset.generate_synthetic(self.cfg.synth)
        train, test = dataset.split(ts, self.cfg.train_per_config, self.cfg.test_per_config,
                                    self.cfg.split_seed)
        self.train_path.parent.mkdir(parents=True, exist_ok=True)
        dataset.save_traces(train, self.train_path)
        dataset.save_traces(test, self.test_path)
        self._data = (train, test)
        self.manifest("generate", [self.train_path, self.test_path])
        return train, test

    def train_mf(self, qubits=None, durations=None):
        train, _ = self.data()
        outputs = []
        for d in self._durations(durations):
            cut = dataset.slice_duration(train, d)
            for q in self._qubits(qubits):
                pre = preprocess.fit_preprocessor(cut, q, self.averaging(q, cut.samples_per_channel))
                path = self.pre_path(q, d)
                path.parent.mkdir(parents=True, exist_ok=True)
                preprocess.save_preprocessor(pre, path)
                outputs.append(path)
        self.manifest("train-mf", outputs)

    def train_teacher(self, qubits=None):
        train, _ = self.data()
        ref = self.reference_view(train)
        dtype = np.dtype(self.cfg.teacher_cfg.dtype).type
        outputs, losses = [], {}
        for q in self._qubits(qubits):
            log.info("training teacher for qubit %d", q)
            net, hist = nn.train_teacher(ref.flat_raw(q, dtype), ref.states(q),
                                         self.cfg.teacher_spec, self.cfg.teacher_cfg)
            path = self.teacher_path(q)
            path.parent.mkdir(parents=True, exist_ok=True)
            nn.save_network(net, path)
            outputs.append(path)
            losses[q] = hist.epoch_loss
        self.manifest("train-teacher", outputs, {"epoch_loss": losses})

    def teacher_logits(self, q):
        if q not in self._teacher_logits:
            train, _ = self.data()
            self._teacher_logits[q] = teacher_logits(self.teacher(q),
                                                     self.reference_view(train).flat_raw(q))
        return self._teacher_logits[q]

    def distill(self, qubits=None, durations=None):
        train, test = self.data()
        ref_raw = self.reference_view(train)
        cfg = self.cfg.student_cfg
        runs, outputs = [], []
        jobs = [(q, d, True) for d in self._durations(durations) for q in self._qubits(qubits)]
        if durations is None or self.cfg.reference_duration_ns in durations:
            jobs += [(q, self.cfg.reference_duration_ns, False) for q in self.cfg.ablation_qubits
                     if qubits is None or q in qubits]
        for q, d, with_mf in jobs:
            log.info("distilling qubit %d at %s (mf=%s)", q, _dur(d), with_mf)
            pre = self.preprocessor(q, d)
            cut_train = dataset.slice_duration(train, d)
            cut_test = dataset.slice_duration(test, d)
            spec = self.cfg.arch_for(q).spec(with_mf)
            view = DistillBatchView(pre.features_for(cut_train, include_mf=with_mf),
                                    ref_raw.flat_raw(q, np.float32), cut_train.states(q))
            student, hist = train_student(None, view, spec, cfg,
                                          cached_logits=self.teacher_logits(q))
            path = self.student_path(q, d, with_mf)
            path.parent.mkdir(parents=True, exist_ok=True)
            nn.save_network(student, path)
            outputs.append(path)
            fid = evaluation.assignment_fidelity(
                nn.predict(student, pre.features_for(cut_test, include_mf=with_mf)),
                cut_test.states(q))[0]
            runs.append({"qubit": q, "duration_ns": d, "matched_filter": with_mf,
                         "final_loss": hist.epoch_loss[-1], "test_fidelity": fid})
        run_manifest = {
            "config": {"alpha": cfg.alpha, "temperature": cfg.temperature,
                       "learning_rate": cfg.learning_rate, "epochs": cfg.epochs,
                       "batch_size": cfg.batch_size, "optimizer": cfg.optimizer},
            "defaults_note": "alpha and temperature are engineering defaults, not published values",
            "seeds": self.cfg.seeds(),
            "runs": runs,
        }
        _dump(self.report_path("distill_run.json"), run_manifest)
        self.manifest("distill", outputs + [self.report_path("distill_run.json")])
        return run_manifest

    def quantize(self, qubits=None, durations=None):
        outputs = []
        for d in self._durations(durations):
            for q in self._qubits(qubits):
                qnet = fxp.quantize_network(self.student(q, d), self.preprocessor(q, d))
                path = self.quant_path(q, d)
                path.parent.mkdir(parents=True, exist_ok=True)
                fxp.save_quant(qnet, path)
                outputs.append(path)
        self.manifest("quantize", outputs)

    def infer(self, qubit, duration=None, traces=None):
        """Fixed-point predictions for every record of ``traces`` (default: test split)."""
        d = self.cfg.reference_duration_ns if duration is None else duration
        ts = self.data()[1] if traces is None else traces
        if ts.n_traces == 0:
            raise ValueError("empty trace set")
        cut = dataset.slice_duration(ts, d)
        logit, state, sat = fxp.fx_forward(self.quantized(qubit, d), *fxp.ingest(cut, qubit),
                                           rounding=self.cfg.fx_rounding)
        return {"logit_raw": logit, "state": state, "saturations": sat,
                "label": cut.states(qubit)}

    def evaluate(self, qubits=None):
        train, test = self.data()
        if test.n_traces == 0:
            raise ValueError("empty test set")
        d = self.cfg.reference_duration_ns
        ref_train, ref_test = self.reference_view(train), self.reference_view(test)
        qs = self._qubits(qubits)
        preds = {k: {} for k in ("teacher", "student", "student_fx", "mf_threshold", "ablated")}
        labels, agree = {}, {}
        for q in qs:
            y = ref_test.states(q)
            labels[q] = y
            preds["teacher"][q] = nn.predict(self.teacher(q), ref_test.flat_raw(q))
            pre = self.preprocessor(q, d)
            student = self.student(q, d)
            f_logit = nn.forward(student, pre.features_for(ref_test))
            preds["student"][q] = (f_logit > 0).astype(np.int64)
            out = self.infer(q, d, test)
            preds["student_fx"][q] = out["state"]
            rate, dev = evaluation.agreement(preds["student"][q], out["state"], f_logit,
                                             fxp.from_fx(out["logit_raw"]))
            agree[q] = {"agreement": rate, "max_logit_dev": dev, "n": int(len(y)),
                        "saturations": int(out["saturations"].sum())}
            preds["mf_threshold"][q] = evaluation.mf_threshold_predictions(
                ref_train, ref_test, q, pre.envelope)
            if q in self.cfg.ablation_qubits:
                ablated = self.student(q, d, with_mf=False)
                preds["ablated"][q] = nn.predict(ablated, pre.features_for(ref_test, include_mf=False))
        reports = {}
        for name, p in preds.items():
            if p:
                rep = evaluation.FidelityReport.from_predictions(p, {q: labels[q] for q in p})
                reports[name] = rep.to_dict()
        student_f = {r["qubit"]: r["fidelity"] for r in reports["student"]["qubits"]}
        worst = min(student_f, key=student_f.get)
        result = {
            "duration_ns": d,
            "fidelity": reports,
            "f_gm_excluding_worst": {
                "excluded_qubit": worst,
                "student": evaluation.geometric_mean([f for q, f in student_f.items() if q != worst]),
            },
            "fx_agreement": agree,
        }
        _dump(self.report_path("evaluate.json"), result)
        rows = ["model,qubit,fidelity,n00,n01,n10,n11"]
        for name, rep in reports.items():
            for r in rep["qubits"]:
                c = r["confusion"]
                rows.append(f"{name},{r['qubit']},{r['fidelity']!r},{c['n00']},{c['n01']},"
                            f"{c['n10']},{c['n11']}")
        self.report_path("evaluate.csv").write_text("\n".join(rows) + "\n")
        self.manifest("evaluate", [self.report_path("evaluate.json"),
                                   self.report_path("evaluate.csv")])
        return result

    def sweep(self, qubits=None, durations=None):
        _, test = self.data()
        durs = self._durations(durations)
        qs = self._qubits(qubits)
        bundles = {(d, q): (self.preprocessor(q, d), self.student(q, d)) for d in durs for q in qs}
        rep = evaluation.sweep_durations(bundles, test, durs, qs)
        _dump(self.report_path("sweep.json"), rep.to_dict())
        self.report_path("sweep.csv").write_text(rep.to_csv())
        self.manifest("sweep", [self.report_path("sweep.json"), self.report_path("sweep.csv")])
        return rep

    def latency(self, qubits=None, clock_mhz=None):
        clock = self.cfg.clock_mhz if clock_mhz is None else clock_mhz
        d = self.cfg.reference_duration_ns
        reports = {q: latency.latency_report(self.quantized(q, d), clock)
                   for q in self._qubits(qubits)}
        _dump(self.report_path("latency.json"), {str(q): r.to_dict() for q, r in reports.items()})
        text = "\n\n".join(f"qubit {q} ({r.architecture})\n{r.to_text()}" for q, r in reports.items())
        self.report_path("latency.txt").write_text(text + "\n")
        self.manifest("latency", [self.report_path("latency.json"),
                                  self.report_path("latency.txt")])
        return reports

    def compression(self):
        teachers = [self.cfg.teacher_spec] * self.cfg.n_qubits
        students = [self.cfg.arch_for(q).spec() for q in range(self.cfg.n_qubits)]
        rep = evaluation.compression_report(teachers, students)
        path = self.report_path("compression.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(rep.to_json() + "\n")
        return rep

    def repro(self):
        """Run every stage in order and write ``summary.json``."""
        self.generate()
        self.train_mf()
        self.train_teacher()
        self.distill()
        self.quantize()
        ev = self.evaluate()
        sw = self.sweep()
        lat = self.latency()
        comp = self.compression()
        summary = summarize(self.cfg, ev, sw, lat, comp)
        _dump(self.report_path("summary.json"), summary)
        self.manifest("repro", [self.report_path("summary.json")])
        return summary


def summarize(cfg, ev, sw, lat, comp) -> dict:
    """Every acceptance-relevant number of one run."""
    fid = {name: {r["qubit"]: r["fidelity"] for r in rep["qubits"]}
           for name, rep in ev["fidelity"].items()}
    gaps = {q: fid["student"][q] - fid["teacher"][q] for q in fid["student"]}
    ablation = {q: fid["student"][q] - fid["ablated"][q] for q in fid.get("ablated", {})}
    ref, short = cfg.reference_duration_ns, min(cfg.durations_ns)
    shortfall = {q: sw.fidelity[short][q] - sw.fidelity[ref][q] for q in sw.qubits}
    specs = {name: a.spec() for name, a in cfg.architectures.items()}
    return {
        "param_counts": {**{name: nn.param_count(s) for name, s in specs.items()},
                         "teacher": nn.param_count(cfg.teacher_spec)},
        "compression": {"ncr": comp.ncr, "teacher_total": comp.teacher_params_total,
                        "student_total": comp.student_params_total,
                        "ncr_vs_baseline": comp.ncr_vs_baseline},
        "fidelity": {name: {str(q): f for q, f in row.items()} for name, row in fid.items()},
        "f_gm": {name: rep["f_gm"] for name, rep in ev["fidelity"].items()},
        "fx_agreement": {str(q): a for q, a in ev["fx_agreement"].items()},
        "sweep": sw.to_dict(),
        "latency": {str(q): {"architecture": r.architecture, "total_cycles": r.total_cycles,
                             "total_ns": r.total_ns, "groups": r.group_cycles()}
                    for q, r in lat.items()},
        "acceptance": {
            "min_student_minus_teacher": min(gaps.values()),
            "min_ablation_gap": min(ablation.values()) if ablation else None,
            "min_fx_agreement": min(a["agreement"] for a in ev["fx_agreement"].values()),
            "fx_records_compared": sum(a["n"] for a in ev["fx_agreement"].values()),
            "max_500_minus_1000": max(shortfall.values()),
            "best_minus_reference_composite": sw.best_composite() - sw.composite(ref),
        },
    }
