"""Structured reports: plain dicts that render either as indented text or JSON."""

from __future__ import annotations

import json

import numpy as np

from .poly import Polynomial, PolyVector, format_polynomial


def _res(r) -> dict | None:
    if r is None:
        return None
    return {"primal": float(r.primal), "dual": float(r.dual), "gap": float(r.gap)}


def _gram(certs) -> dict:
    return {
        name: {
            "basis_size": len(c.basis),
            "min_eig": float(c.min_eig),
            "residual": float(c.residual),
        }
        for name, c in certs.items()
    }


def sos_report(p: Polynomial, sol=None, reason: str = "") -> dict:
    out = {"kind": "check-sos", "polynomial": format_polynomial(p)}
    if sol is None:
        out.update(sos=False, reason=reason)
        return out
    cert = sol.certificates["p"]
    names = [format_polynomial(Polynomial.monomial(m)) for m in cert.basis]
    out.update(
        sos=True,
        status=str(sol.status.value),
        basis=names,
        gram=np.asarray(cert.Q).tolist(),
        min_eig=float(cert.min_eig),
        residual=float(cert.residual),
    )
    return out


def program_report(sol=None, reason: str = "") -> dict:
    out = {"kind": "sos-program"}
    if sol is None:
        out.update(feasible=False, reason=reason)
        return out
    vals = {}
    for name, v in sol.values.items():
        vals[name] = format_polynomial(v) if isinstance(v, Polynomial) else float(v)
    out.update(
        feasible=True,
        status=str(sol.status.value),
        objective=float(sol.objective),
        values=vals,
        residuals=_res(sol.sdp_solution.residuals),
        certificates=_gram(sol.certificates),
    )
    return out


def bound_report(cert, system_name: str = "") -> dict:
    return {
        "kind": "bound",
        "system": system_name,
        "direction": cert.direction,
        "C": float(cert.C),
        "d_V": cert.d_V,
        "d_S": cert.d_S,
        "beta": cert.beta,
        "status": cert.status,
        "V": format_polynomial(cert.V),
        "multipliers": {k: format_polynomial(v) for k, v in cert.multipliers.items()},
        "residuals": _res(cert.residuals),
        "certificates": _gram(cert.certificates),
    }


def synthesis_report(res, system_name: str = "") -> dict:
    return {
        "kind": "synthesize",
        "system": system_name,
        "C0": float(res.C0),
        "C1": float(res.C1),
        "beta": res.beta,
        "eps_max": res.eps_max,
        "degrees": res.degrees.as_dict(),
        "status": res.status,
        "u1": [format_polynomial(p) for p in res.u1],
        "V0": format_polynomial(res.V0),
        "V1": format_polynomial(res.V1),
        "multipliers": {k: format_polynomial(v) for k, v in res.multipliers.items()},
        "residuals": _res(res.residuals),
        "certificates": _gram(res.certificates),
    }


def sweep_report(sweep, system_name: str = "") -> dict:
    rows = []
    for e, p, p0, b, d, c in zip(sweep.eps, sweep.phi_bar, sweep.phi0_bar, sweep.bound_line,
                                 sweep.diverged, sweep.convergence):
        rows.append({
            "eps": float(e),
            "phi_bar": None if d else float(p),
            "phi0_bar": None if d else float(p0),
            "bound_line": float(b),
            "diverged": bool(d),
            "convergence": None if d else float(c),
        })
    out = {"kind": "sweep", "system": system_name, "rows": rows}
    try:
        e, p = sweep.minimum()
        out.update(argmin_eps=e, min_phi_bar=p)
    except RuntimeError:
        out.update(argmin_eps=None, min_phi_bar=None)
    return out


def to_json(report: dict) -> str:
    return json.dumps(report, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (Polynomial, PolyVector)):
        return str(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def _scalar(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def to_text(report: dict, indent: int = 0) -> str:
    pad = "  " * indent
    lines = []
    for key, val in report.items():
        if key == "kind":
            continue
        if isinstance(val, dict):
            if not val:
                continue
            lines.append(f"{pad}{key}:")
            lines.append(to_text(val, indent + 1))
        elif key == "rows":
            cols = list(val[0]) if val else []
            lines.append(pad + "  ".join(f"{c:>12}" for c in cols))
            for row in val:
                lines.append(pad + "  ".join(f"{_scalar(row[c]):>12}" for c in cols))
        elif isinstance(val, list) and val and isinstance(val[0], list):
            lines.append(f"{pad}{key}:")
            for row in val:
                lines.append(pad + "  " + " ".join(f"{x:12.6g}" for x in row))
        elif isinstance(val, list):
            lines.append(f"{pad}{key}: " + ", ".join(_scalar(x) for x in val))
        else:
            lines.append(f"{pad}{key}: {_scalar(val)}")
    return "\n".join(l for l in lines if l)
