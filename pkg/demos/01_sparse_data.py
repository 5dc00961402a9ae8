"""Loading sparse data and reading off the quantities the solvers need.

Run: python demos/01_sparse_data.py
"""
import tempfile
from pathlib import Path

from asaga.data import load_libsvm, make_synthetic, problem_constants, save_dataset, sparsity_profile

# A libsvm file: label then 1-based index:value pairs, indices increasing.
text = """+1 1:0.5 3:1.0
-1 2:1.0 3:-0.5
+1 1:1.0 2:0.25
-1 3:1.0
"""
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "toy.svm"
    path.write_text(text)
    toy = load_libsvm(path)
    # a binary copy loads without reparsing
    save_dataset(toy, Path(tmp) / "toy.npz")

print(f"toy: n={toy.n} d={toy.d} nnz={toy.nnz}")
for i in range(toy.n):
    cols, vals = toy.row(i)
    print(f"  row {i}: label {toy.labels[i]:+.0f} support {cols.tolist()} values {vals.tolist()}")

# p_v is the fraction of rows that touch feature v; the sparse update reweights by 1/p_v.
prof = sparsity_profile(toy)
print("p_v    =", prof.p.tolist())
print("1/p_v  =", prof.d_diag.tolist())
print("Delta  =", prof.delta, "(max share of rows touching one feature)")

# The synthetic generator dials in sparsity and conditioning.
ds = make_synthetic(2000, 500, density=0.01, seed=1)
c = problem_constants(ds, lam=0.01)
print(f"synthetic: n={ds.n} d={ds.d} density={ds.density:.4f} Delta={sparsity_profile(ds).delta:.3f}")
print(f"  L={c.L:.3f} kappa={c.kappa:.1f} -> {'well' if ds.n > c.kappa else 'ill'}-conditioned")
