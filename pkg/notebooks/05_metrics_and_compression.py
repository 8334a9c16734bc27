"""
Fidelity aggregation and network compression
============================================

Reproduces the architecture-derived numbers: parameter counts, the network
compression rate against five teachers, and the geometric-mean fidelities
of a published per-qubit fidelity row.
"""

from qreadout import evaluation, nn

for name, spec in (("teacher", nn.TEACHER), ("FNN-A", nn.FNN_A), ("FNN-B", nn.FNN_B)):
    print(f"{name:>7} {'-'.join(map(str, spec.dims)):>22}  {nn.param_count(spec):>9,} parameters")

students = [nn.FNN_A, nn.FNN_B, nn.FNN_B, nn.FNN_A, nn.FNN_A]
rep = evaluation.compression_report([nn.TEACHER] * 5, students)
print(f"\nteachers {rep.teacher_params_total:,}  students {rep.student_params_total:,}  "
      f"NCR {rep.ncr:.5f}")
print(rep.note)

row = [0.968, 0.748, 0.929, 0.934, 0.959]
f5 = evaluation.geometric_mean(row)
f4 = evaluation.geometric_mean(row[:1] + row[2:])
print(f"\nF_GM over five qubits {f5:.3f}; dropping the weakest qubit {f4:.3f}")
print(f"arithmetic mean {sum(row) / 5:.3f} (never below the geometric mean)")
