"""Bus admittance matrix assembly from the branch pi model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .cases import NetworkCase
from .errors import CaseValidationError


@dataclass(frozen=True)
class BranchAdmittance:
    """Two-port admittance of one in-service branch.

    The from- and to-end complex currents are
    ``i_f = yff*v_f + yft*v_t`` and ``i_t = ytf*v_f + ytt*v_t``,
    which is all the flow equations need.  ``y_series`` is kept for
    inspection and the 4-entry update check on branch removal.
    """

    index: int
    from_pos: int
    to_pos: int
    y_series: complex
    yff: complex
    yft: complex
    ytf: complex
    ytt: complex


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Sparse n-by-n complex Ybus plus per-branch admittances for flows."""

    n: int
    matrix: sp.csr_matrix
    branch_admittances: tuple[BranchAdmittance, ...]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def branch_two_port(branch) -> tuple[complex, complex, complex, complex, complex]:
    """Series admittance and the (yff, yft, ytf, ytt) two-port of one branch."""
    if branch.r_pu == 0.0 and branch.x_pu == 0.0:
        raise CaseValidationError(
            f"branch {branch.from_bus}-{branch.to_bus}: r and x both zero, no series admittance")
    ys = 1.0 / complex(branch.r_pu, branch.x_pu)
    bc = 0.5j * branch.b_pu
    tap = branch.tap * np.exp(1j * branch.shift_rad)
    yff = (ys + bc) / (tap * np.conj(tap))
    yft = -ys / np.conj(tap)
    ytf = -ys / tap
    ytt = ys + bc
    return ys, yff, yft, ytf, ytt


def build_ybus(case: NetworkCase) -> AdmittanceMatrix:
    """Assemble Ybus over in-service branches plus bus shunts.

    Bus shunts enter the diagonal as (gs_mw + j*bs_mvar) / base_mva, i.e. the
    per-unit power drawn (injected for bs) at 1.0 pu voltage.
    """
    n = case.n_buses
    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []
    records: list[BranchAdmittance] = []
    for idx, br in enumerate(case.branches):
        if not br.in_service:
            continue
        f = case.internal_index[br.from_bus]
        t = case.internal_index[br.to_bus]
        ys, yff, yft, ytf, ytt = branch_two_port(br)
        rows += [f, f, t, t]
        cols += [f, t, f, t]
        vals += [yff, yft, ytf, ytt]
        records.append(BranchAdmittance(idx, f, t, ys, yff, yft, ytf, ytt))
    for i, bus in enumerate(case.buses):
        shunt = complex(bus.gs_mw, bus.bs_mvar) / case.base_mva
        if shunt != 0:
            rows.append(i)
            cols.append(i)
            vals.append(shunt)
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex).tocsr()
    return AdmittanceMatrix(n, matrix, tuple(records))
