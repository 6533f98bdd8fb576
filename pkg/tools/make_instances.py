"""Author the shipped instance files from the reference generator sets.

Run from the repository root::

    python tools/make_instances.py

Numbers are written with ``repr`` (shortest round-trip decimal), so the files
reproduce the reference arrays bit for bit.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from kkreduce.config import encode_complex_matrices, sparse_structure_constants
from kkreduce.lie_algebra import structure_constants_from_generators, su2_generators, su3_generators

OUT = Path(__file__).resolve().parents[1] / "src" / "kkreduce" / "data" / "instances"


def _value(v) -> str:
    if isinstance(v, str):
        return '"' + v.replace('"', '\\"') + '"'
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_value(x) for x in v) + "]"
    raise TypeError(type(v))


def _matrices(key: str, mats) -> str:
    lines = [f"{key} = ["]
    for m in encode_complex_matrices(mats):
        lines.append("  [")
        for row in m:
            lines.append("    " + _value(row) + ",")
        lines.append("  ],")
    lines.append("]")
    return "\n".join(lines)


def algebra_block(name: str, gens, h, khat, lbar, safe_radius: float) -> str:
    f = structure_constants_from_generators(gens)
    f[np.abs(f) < 1e-15] = 0.0
    recs = sparse_structure_constants(f)
    lines = [
        "[algebra]",
        f'name = "{name}"',
        f"dim = {gens.shape[0]}",
        f"rep_dim = {gens.shape[1]}",
        f"h = {_value(list(h))}",
        f"khat = {_value(list(khat))}",
        f"lbar = {_value(list(lbar))}",
        f"safe_radius = {safe_radius!r}",
        "# f^C_AB as [C, A, B, value] with A < B",
        "structure_constants = [",
    ]
    lines += ["  " + _value(r) + "," for r in recs]
    lines += ["]", "# Q_A, row-major, entries as [re, im]", _matrices("generators", gens)]
    return "\n".join(lines)


def table(key: str, rows) -> str:
    return f"{key} = [\n" + "".join("  " + _value(list(r)) + ",\n" for r in rows) + "]"


def write(name: str, description: str, blocks: list[str]) -> None:
    text = f'name = "{name}"\ndescription = "{description}"\n\n' + "\n\n".join(blocks) + "\n"
    (OUT / f"{name}.toml").write_text(text)
    print("wrote", OUT / f"{name}.toml")


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    su2, su3 = su2_generators(), su3_generators()
    su2_alg = algebra_block("su2", su2, (2,), (), (0, 1), 2.5)
    su3_alg = algebra_block("su3", su3, (0, 1, 2), (7,), (3, 4, 5, 6), 3.5)
    su2_irreps = "\n\n".join([
        '[[irreps]]\nlabel = "spin1"\nkind = "spin"\nspin = 1',
        '[[irreps]]\nlabel = "spin2"\nkind = "spin"\nspin = 2',
        '[[irreps]]\nlabel = "trivial"\nkind = "trivial"',
    ])
    su3_irreps = "\n\n".join([
        '[[irreps]]\nlabel = "fundamental"\nkind = "matrices"\n' + _matrices("matrices", su3),
        '[[irreps]]\nlabel = "adjoint"\nkind = "adjoint"',
        '[[irreps]]\nlabel = "trivial"\nkind = "trivial"',
    ])
    write(
        "coset_only",
        "SU(2)/U(1) orbit over a point base; Killing-orthonormal fiber metric.",
        [su2_alg, '[base]\nkind = "point"', '[connection]\nkind = "zero"',
         "[fiber_metric]\n" + table("matrix", np.eye(2).tolist()), su2_irreps],
    )
    write(
        "su2_flat",
        "SU(2)/U(1) orbits over a flat plane with an x-dependent scalar fiber metric.",
        [su2_alg, '[base]\nkind = "flat"\ndim = 2\ndomain = [[-6.0, 6.0], [-6.0, 6.0]]',
         '[connection]\nkind = "zero"',
         "[fiber_metric]\n" + table("matrix", [["1 + 0.2*sin(x1)", "0"], ["0", "1 + 0.2*sin(x1)"]]),
         su2_irreps],
    )
    g_fc = np.diag([0.8, 1.25, 1.25, 1.25, 1.25])
    write(
        "flat_const",
        "SU(3)/SU(2) orbits over a flat chart; linear U(1) connection with nonzero divergence.",
        [su3_alg, '[base]\nkind = "flat"\ndim = 2\ndomain = [[-6.0, 6.0], [-6.0, 6.0]]',
         '[connection]\nkind = "expressions"\n'
         + table("components", [["0.6*x1 - 0.4*x2 + 0.3", "0.4*x1 + 0.5*x2 - 0.2"]]),
         "[fiber_metric]\n# coset order: khat (Q8) first, then lbar (Q4..Q7)\n" + table("matrix", g_fc.tolist()),
         su3_irreps],
    )
    g_h = np.diag([0.7, 1.0, 1.0, 1.0, 1.0])
    write(
        "hopf",
        "SU(3)/SU(2) orbits over the round 2-sphere (stereographic chart) with the monopole connection.",
        [su3_alg, '[base]\nkind = "round_sphere"\ndim = 2\nradius = 1.0\ndomain = [[-12.0, 12.0], [-12.0, 12.0]]',
         '[connection]\nkind = "monopole"\ncharge = 1.0',
         "[fiber_metric]\n# coset order: khat (Q8) first, then lbar (Q4..Q7)\n" + table("matrix", g_h.tolist()),
         su3_irreps],
    )


if __name__ == "__main__":
    main()
