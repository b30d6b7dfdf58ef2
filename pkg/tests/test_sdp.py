import numpy as np
import pytest

from ltac.bounds import upper_bound, upper_bound_ball
from ltac.poly import parse_polynomial
from ltac.sdp import SdpError, SdpProblem, SolverOptions, Status, min_eigenvalues, residuals, solve
from ltac.sdpa import SdpaParseError, export_sdpa, import_sdpa, read_sdpa, write_sdpa
from ltac.sos import InfeasibleError, SosProgram, check_sos, compile_program

from cvx_oracle import solve_with_cvxpy

E00 = np.array([[1.0, 0], [0, 0]])
E11 = np.array([[0.0, 0], [0, 1]])
E01 = np.array([[0, 0.5], [0.5, 0]])


def min_x_free_form():
    """min x s.t. [[x,1],[1,x]] = X >= 0, with x a free variable."""
    A = np.array([E00, E11, E01])
    return SdpProblem((2,), (A,), (np.zeros((2, 2)),), np.array([0, 0, 1.0]),
                      np.array([[-1.0], [-1.0], [0.0]]), np.array([1.0]))


def min_x_dual_form():
    """Same problem as the dual of max <-[[0,1],[1,0]], X> s.t. trace X = 1:
    one constraint, one 2x2 block, and x = -y."""
    return SdpProblem((2,), (np.eye(2)[None],), (np.array([[0, 1.0], [1, 0]]),), np.array([1.0]),
                      np.zeros((1, 0)), np.zeros(0))


def trace_problem(n=3):
    A = np.zeros((1, n, n))
    A[0, 0, 0] = 1.0
    return SdpProblem((n,), (A,), (np.eye(n),), np.array([2.0]), np.zeros((1, 0)), np.zeros(0))


def check_optimal(p, sol):
    assert sol.status is Status.OPTIMAL
    r = residuals(p, sol)
    assert r.primal <= 1e-8 and r.dual <= 1e-8
    assert r.gap <= 1e-8
    assert min(min_eigenvalues(sol.X)) >= -1e-8
    assert min(min_eigenvalues(sol.S)) >= -1e-8


def test_min_x_free_form():
    p = min_x_free_form()
    sol = solve(p)
    check_optimal(p, sol)
    assert sol.x_free[0] == pytest.approx(1.0, abs=1e-7)


def test_min_x_dual_form():
    p = min_x_dual_form()
    sol = solve(p)
    check_optimal(p, sol)
    assert -sol.y[0] == pytest.approx(1.0, abs=1e-7)


def test_trace_problem():
    p = trace_problem()
    sol = solve(p)
    check_optimal(p, sol)
    assert sol.primal_objective == pytest.approx(2.0, abs=1e-7)
    assert np.allclose(sol.X[0], np.diag([2.0, 0, 0]), atol=1e-6)


def test_primal_infeasible():
    A = np.zeros((1, 2, 2))
    A[0, 0, 0] = 1.0
    p = SdpProblem((2,), (A,), (np.eye(2),), np.array([-1.0]), np.zeros((1, 0)), np.zeros(0))
    assert solve(p).status is Status.PRIMAL_INFEASIBLE


def test_dual_infeasible():
    # min -X12 s.t. X11 = 1: X22 grows without bound
    A = np.zeros((1, 2, 2))
    A[0, 0, 0] = 1.0
    C = -np.array([[0, 0.5], [0.5, 0]])
    p = SdpProblem((2,), (A,), (C,), np.array([1.0]), np.zeros((1, 0)), np.zeros(0))
    assert solve(p).status is Status.DUAL_INFEASIBLE


def test_motzkin_primal_infeasible():
    p = parse_polynomial("x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1")
    with pytest.raises(InfeasibleError) as info:
        check_sos(p)
    assert info.value.status is Status.PRIMAL_INFEASIBLE


def test_dependent_rows_presolved():
    base = min_x_free_form()
    A = np.concatenate([base.A[0], base.A[0][:1] * 2.0])
    Af = np.concatenate([base.A_free, base.A_free[:1] * 2.0])
    b = np.concatenate([base.b, base.b[:1] * 2.0])
    p = SdpProblem((2,), (A,), base.C, b, Af, base.c_free)
    sol = solve(p)
    assert sol.status is Status.OPTIMAL
    assert sol.x_free[0] == pytest.approx(1.0, abs=1e-7)


def test_residual_examples():
    p = trace_problem()
    sol = solve(p)
    X = [sol.X[0].copy()]
    X[0][0, 0] += 1.0
    assert residuals(p, X, sol.y, sol.S).primal == pytest.approx(1.0, abs=1e-8)
    z = SdpProblem((2,), (np.zeros((0, 2, 2)),), (np.zeros((2, 2)),), np.zeros(0), np.zeros((0, 0)), np.zeros(0))
    r = residuals(z, [np.zeros((2, 2))])
    assert (r.primal, r.dual, r.gap) == (0.0, 0.0, 0.0)


def test_weak_duality_at_optimum():
    p = min_x_free_form()
    sol = solve(p)
    assert sol.primal_objective - sol.dual_objective >= -1e-9


def test_invariants_enforced():
    with pytest.raises(SdpError):
        SdpProblem((2,), (np.array([[[0, 1.0], [0, 0]]]),), (np.zeros((2, 2)),), np.array([1.0]),
                   np.zeros((1, 0)), np.zeros(0))
    with pytest.raises(SdpError):
        SdpProblem((2,), (np.zeros((1, 3, 3)),), (np.zeros((2, 2)),), np.array([1.0]),
                   np.zeros((1, 0)), np.zeros(0))


def test_deterministic():
    p = min_x_free_form()
    a, b = solve(p), solve(p)
    assert np.array_equal(a.X[0], b.X[0]) and np.array_equal(a.y, b.y)
    assert a.iterations == b.iterations


def test_env_tolerance(monkeypatch):
    monkeypatch.setenv("LTAC_SOLVER_TOL", "1e-6")
    assert SolverOptions.from_env().gap_tol == 1e-6
    monkeypatch.delenv("LTAC_SOLVER_TOL")
    assert SolverOptions.from_env().gap_tol == 1e-8


# -- cross-check against an external conic solver -----------------------------------


def _random_feasible(seed, n=4, m=5):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n, n))
    A = A + A.transpose(0, 2, 1)
    X0 = np.eye(n)
    b = np.einsum("mij,ij->m", A, X0)
    B = rng.standard_normal((n, n))
    C = B @ B.T + np.eye(n)  # dual feasible with y = 0
    return SdpProblem((n,), (A,), (C,), b, np.zeros((m, 0)), np.zeros(0))


@pytest.mark.parametrize("seed", range(5))
def test_random_against_cvxpy(seed):
    p = _random_feasible(seed)
    sol = solve(p)
    check_optimal(p, sol)
    status, value = solve_with_cvxpy(p)
    assert status == "optimal"
    assert sol.primal_objective == pytest.approx(value, rel=1e-6, abs=1e-6)


def test_bound_sdps_against_cvxpy(b1, vdp):
    for cert in (upper_bound(b1, 4), upper_bound_ball(vdp, 4, 4, vdp.beta)):
        sol = solve(cert.sdp)
        status, value = solve_with_cvxpy(cert.sdp)
        assert status.startswith("optimal")
        assert sol.primal_objective == pytest.approx(value, rel=1e-6, abs=1e-6)


# -- SDPA files --------------------------------------------------------------------


def test_sdpa_dual_form_layout():
    text = export_sdpa(min_x_dual_form())
    lines = text.splitlines()
    assert lines[:4] == ["1", "1", "2", "1"]
    assert lines[4:] == ["0 1 1 2 -1", "1 1 1 1 1", "1 1 2 2 1"]
    assert export_sdpa(min_x_dual_form()) == text


def test_sdpa_free_block_negative_size():
    lines = export_sdpa(min_x_free_form()).splitlines()
    assert lines[1] == "2" and lines[2] == "2 -1"


@pytest.mark.parametrize("make", [min_x_free_form, min_x_dual_form, trace_problem,
                                  lambda: _random_feasible(3)])
def test_sdpa_round_trip(make):
    p = make()
    text = export_sdpa(p)
    q = import_sdpa(text)
    assert q == p
    assert export_sdpa(q) == text


def test_sdpa_round_trip_compiled(vdp_cert4, tmp_path):
    p = vdp_cert4.sdp
    path = tmp_path / "vdp.dat-s"
    write_sdpa(p, path)
    assert read_sdpa(path) == p
    assert path.read_text() == export_sdpa(read_sdpa(path))


def test_sdpa_full_precision():
    p = SdpProblem((1,), (np.array([[[1.0]]]),), (np.array([[0.1]]),), np.array([1 / 3]),
                   np.zeros((1, 0)), np.zeros(0))
    q = import_sdpa(export_sdpa(p))
    assert q.b[0] == 1 / 3 and q.C[0][0, 0] == 0.1


def test_sdpa_comments_and_separators():
    text = '"title line\n* comment\n1 =mDIM\n1\n{2}\n{1.0}\n% entries\n0 1 1 2 -1\n1,1,1,1,1\n1 1 2 2 1\n'
    text = text.replace("1 =mDIM", "1")
    assert import_sdpa(text) == min_x_dual_form()


@pytest.mark.parametrize(
    "text, line",
    [
        ("1\n1\n2\n1\n0 1 1 2\n", 5),
        ("1\n1\n2\n1\n0 3 1 1 1\n", 5),
        ("1\n1\n2\n1\n2 1 1 1 1\n", 5),
        ("1\n1\n2\n1\n1 1 3 1 1\n", 5),
        ("1\n1\nx\n1\n", 3),
        ("1\n1\n2\n", 3),
    ],
)
def test_sdpa_parse_errors(text, line):
    with pytest.raises(SdpaParseError) as info:
        import_sdpa(text)
    assert info.value.line == line


def test_sdp_compiled_from_program_round_trips():
    prog = SosProgram(2)
    C = prog.new_scalar("C")
    prog.add_sos(parse_polynomial("x1^4 + x2^2 + 1", 2) - C)
    prog.maximize(C)
    p = compile_program(prog).sdp
    assert import_sdpa(export_sdpa(p)) == p
