"""
Face-based finite-volume assembly shared by the residual, the SIMPLE loop and the adjoint.

Every transport equation is assembled in coefficient form

    a_P phi_P - sum_nb a_nb phi_nb = b

and its residual is R = b + sum_nb a_nb phi_nb - a_P phi_P. Coefficients depend
on the state they are assembled from, so evaluating R at a state is exact and
the SIMPLE iteration converges to the zero of the same R that the adjoint
linearises.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import sparse

from ..models.flow import (
    BoundaryConditions,
    ConvectionScheme,
    TurbulenceConstants,
    TurbulenceModel,
)
from ..models.mesh import FaceTag, Mesh
from .mesh import boundary_values, green_gauss, interpolation_weights


SKIP, DIRICHLET, NEUMANN = 0, 1, 2
TINY = 1e-300


@dataclass(frozen=True, eq=False)
class FaceGeometry:
    n_cells: int
    P: np.ndarray
    N: np.ndarray
    area: np.ndarray
    normal: np.ndarray
    center: np.ndarray
    d_PN: np.ndarray
    w: np.ndarray
    bP: np.ndarray
    b_area: np.ndarray
    b_normal: np.ndarray
    b_center: np.ndarray
    b_dist: np.ndarray
    b_tag: np.ndarray
    fluid: np.ndarray
    fluid_cells: np.ndarray
    fluid_index: np.ndarray


@lru_cache(maxsize=32)
def face_geometry(mesh: Mesh) -> FaceGeometry:
    faces = mesh.interior_faces
    P, N = mesh.face_owner[faces], mesh.face_neighbour[faces]
    normal = mesh.face_normal[faces]
    d_PN = np.abs(np.einsum("ij,ij->i", mesh.centers[N] - mesh.centers[P], normal))

    bfaces = mesh.boundary_faces
    bP = mesh.face_owner[bfaces]
    b_normal = mesh.face_normal[bfaces]
    b_dist = np.abs(np.einsum("ij,ij->i", mesh.face_center[bfaces] - mesh.centers[bP], b_normal))

    fluid = mesh.fluid
    fluid_cells = np.flatnonzero(fluid)
    fluid_index = np.full(mesh.n_cells, -1, dtype=int)
    fluid_index[fluid_cells] = np.arange(len(fluid_cells))

    return FaceGeometry(
        n_cells=mesh.n_cells,
        P=P,
        N=N,
        area=mesh.face_area[faces],
        normal=normal,
        center=mesh.face_center[faces],
        d_PN=d_PN,
        w=interpolation_weights(mesh),
        bP=bP,
        b_area=mesh.face_area[bfaces],
        b_normal=b_normal,
        b_center=mesh.face_center[bfaces],
        b_dist=b_dist,
        b_tag=mesh.face_tag[bfaces].astype(int),
        fluid=fluid,
        fluid_cells=fluid_cells,
        fluid_index=fluid_index,
    )


@dataclass
class Coefficients:
    a_p: np.ndarray
    b: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    a_nb: np.ndarray
    fixed: Optional[np.ndarray] = None

    def residual(self, phi: np.ndarray) -> np.ndarray:
        r = self.b - self.a_p * phi
        np.add.at(r, self.rows, self.a_nb * phi[self.cols])
        return r

    def scale(self, phi: np.ndarray, fluid: np.ndarray) -> float:
        # pinned rows would swamp the transported ones
        if self.fixed is not None and np.any(fluid & ~self.fixed):
            fluid = fluid & ~self.fixed
        return float(np.sum(np.abs(self.a_p * phi)[fluid]) + np.sum(np.abs(self.b)[fluid]))

    def pin(self, cells: np.ndarray, values: np.ndarray) -> None:
        """Replace the rows of cells by a_P * (value - phi), keeping a_P."""
        self.b[cells] = self.a_p[cells] * values
        self.a_nb[np.isin(self.rows, cells)] = 0.0
        fixed = np.zeros(len(self.a_p), dtype=bool) if self.fixed is None else self.fixed.copy()
        fixed[cells] = True
        self.fixed = fixed

    def matrix(self, geom: FaceGeometry, relax: float = 1.0) -> sparse.csr_matrix:
        idx = geom.fluid_index
        n = len(geom.fluid_cells)
        diag = self.a_p[geom.fluid_cells] / relax
        rows = np.concatenate([np.arange(n), idx[self.rows]])
        cols = np.concatenate([np.arange(n), idx[self.cols]])
        vals = np.concatenate([diag, -self.a_nb])
        return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


@dataclass
class TurbulenceTerms:
    strain: np.ndarray
    nu_t: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    cd_kw: np.ndarray
    production_k: np.ndarray
    production_omega: np.ndarray
    beta: np.ndarray
    sigma_k: np.ndarray
    sigma_w: np.ndarray
    cross_diffusion: np.ndarray


@dataclass
class SystemAssembly:
    equations: Dict[str, Coefficients]
    continuity: Optional[np.ndarray]
    continuity_scale: float
    terms: Optional[TurbulenceTerms]
    flux: np.ndarray
    flux_b: np.ndarray
    momentum_diag: np.ndarray
    grad_p: np.ndarray


def constants_for(model: TurbulenceModel) -> TurbulenceConstants:
    if model == TurbulenceModel.WILCOX:
        return TurbulenceConstants.wilcox()
    return TurbulenceConstants()


def strain_magnitude(grad_u: np.ndarray, grad_v: np.ndarray) -> np.ndarray:
    """sqrt(2 S_ij S_ij) for a planar velocity field."""
    ux, uy = grad_u[:, 0], grad_u[:, 1]
    vx, vy = grad_v[:, 0], grad_v[:, 1]
    return np.sqrt(2.0 * ux ** 2 + 2.0 * vy ** 2 + (uy + vx) ** 2)


def turbulence_terms(
    mesh: Mesh,
    model: TurbulenceModel,
    constants: TurbulenceConstants,
    nu: float,
    grad_u: np.ndarray,
    grad_v: np.ndarray,
    k: np.ndarray,
    omega: np.ndarray,
    grad_k: np.ndarray,
    grad_w: np.ndarray,
) -> TurbulenceTerms:
    c = constants
    strain = strain_magnitude(grad_u, grad_v)
    k_pos = np.maximum(k, 0.0)
    omega = np.maximum(omega, TINY)
    d = np.where(mesh.fluid, mesh.wall_distance, 1.0)

    dot = np.einsum("ij,ij->i", grad_k, grad_w)
    cd_kw = np.maximum(2.0 * c.sigma_w2 * dot / omega, c.cd_floor)

    if model == TurbulenceModel.SST:
        sqrt_k = np.sqrt(k_pos)
        viscous = 500.0 * nu / (d ** 2 * omega)
        arg1 = np.minimum(
            np.maximum(sqrt_k / (c.beta_star * omega * d), viscous),
            4.0 * c.sigma_w2 * k_pos / (cd_kw * d ** 2),
        )
        f1 = np.tanh(arg1 ** 4)
        arg2 = np.maximum(2.0 * sqrt_k / (c.beta_star * omega * d), viscous)
        f2 = np.tanh(arg2 ** 2)
        nu_t = c.a1 * k_pos / np.maximum(c.a1 * omega, strain * f2)
        production_k = np.minimum(nu_t * strain ** 2, c.production_limit * c.beta_star * k_pos * omega)
    else:
        f1 = np.ones(mesh.n_cells)
        f2 = np.ones(mesh.n_cells)
        nu_t = k_pos / omega
        production_k = nu_t * strain ** 2

    gamma = constants.blend(f1, "gamma")
    ratio = np.where(nu_t > 0, production_k / np.where(nu_t > 0, nu_t, 1.0), strain ** 2)
    production_omega = gamma * ratio
    cross = 2.0 * (1.0 - f1) * c.sigma_w2 * dot / omega

    nu_t = np.where(mesh.fluid, nu_t, 0.0)
    return TurbulenceTerms(
        strain=strain,
        nu_t=nu_t,
        f1=f1,
        f2=f2,
        cd_kw=cd_kw,
        production_k=production_k,
        production_omega=production_omega,
        beta=constants.blend(f1, "beta"),
        sigma_k=constants.blend(f1, "sigma_k"),
        sigma_w=constants.blend(f1, "sigma_w"),
        cross_diffusion=cross,
    )


def boundary_spec(
    geom: FaceGeometry,
    variable: str,
    bc: BoundaryConditions,
    constants: TurbulenceConstants,
) -> Tuple[np.ndarray, np.ndarray]:
    """Boundary condition kind and Dirichlet value per boundary face."""
    tag = geom.b_tag
    kind = np.full(len(tag), NEUMANN, dtype=int)
    value = np.zeros(len(tag))
    kind[tag == FaceTag.PERIODIC] = SKIP

    wall = tag == FaceTag.WALL
    inlet = tag == FaceTag.INLET
    symmetry = tag == FaceTag.SYMMETRY

    if variable == "u":
        kind[wall] = DIRICHLET
        kind[inlet] = DIRICHLET
        value[inlet] = bc.inlet_velocity or 0.0
        normal_x = symmetry & (np.abs(geom.b_normal[:, 0]) > 0.5)
        kind[normal_x] = DIRICHLET
    elif variable == "v":
        kind[wall | inlet] = DIRICHLET
        normal_y = symmetry & (np.abs(geom.b_normal[:, 1]) > 0.5)
        kind[normal_y] = DIRICHLET
    elif variable == "k":
        kind[wall | inlet] = DIRICHLET
        value[inlet] = bc.inlet_k or 0.0
    elif variable == "omega":
        kind[wall | inlet] = DIRICHLET
        value[wall] = wall_omega(bc.nu, geom.b_dist[wall], constants)
        value[inlet] = bc.inlet_omega or 1.0
    return kind, value


def wall_omega(nu: float, distance: np.ndarray, constants: TurbulenceConstants) -> np.ndarray:
    """Wall-face omega; only enters the gradients of the wall-adjacent cells."""
    return 60.0 * nu / (constants.beta1 * distance ** 2)


def near_wall_omega(nu: float, distance: np.ndarray, constants: TurbulenceConstants) -> np.ndarray:
    """Viscous-sublayer omega, 6 nu / (beta1 d^2), imposed at wall-adjacent cell centres."""
    return 6.0 * nu / (constants.beta1 * distance ** 2)


@lru_cache(maxsize=32)
def wall_cells(mesh: Mesh) -> np.ndarray:
    geom = face_geometry(mesh)
    cells = np.unique(geom.bP[geom.b_tag == FaceTag.WALL])
    return cells[mesh.fluid[cells]]


def face_values(phi: np.ndarray, geom: FaceGeometry, kind: np.ndarray, value: np.ndarray) -> np.ndarray:
    return np.where(kind == DIRICHLET, value, phi[geom.bP])


def bc_gradient(phi: np.ndarray, mesh: Mesh, geom: FaceGeometry,
                kind: np.ndarray, value: np.ndarray) -> np.ndarray:
    return green_gauss(phi, mesh, face_values(phi, geom, kind, value))


def sou_correction(geom: FaceGeometry, mesh: Mesh, phi: np.ndarray,
                   grad: np.ndarray, flux: np.ndarray) -> np.ndarray:
    """Deferred-correction source turning upwind into second-order upwind."""
    upwind = np.where(flux > 0, geom.P, geom.N)
    delta = np.einsum("ij,ij->i", grad[upwind], geom.center - mesh.centers[upwind])
    c = flux * delta
    correction = np.zeros(geom.n_cells)
    np.add.at(correction, geom.P, -c)
    np.add.at(correction, geom.N, c)
    return correction


def assemble_scalar(
    geom: FaceGeometry,
    phi: np.ndarray,
    gamma_cell: np.ndarray,
    gamma_b: np.ndarray,
    flux: np.ndarray,
    flux_b: np.ndarray,
    kind: np.ndarray,
    value: np.ndarray,
    source: np.ndarray,
    sink: np.ndarray,
    correction: Optional[np.ndarray] = None,
) -> Coefficients:
    n = geom.n_cells
    a_p = np.array(sink, dtype=float)
    b = np.array(source, dtype=float)

    gamma_f = geom.w * gamma_cell[geom.P] + (1.0 - geom.w) * gamma_cell[geom.N]
    D = gamma_f * geom.area / geom.d_PN
    out_P = D + np.maximum(flux, 0.0)
    in_P = D + np.maximum(-flux, 0.0)
    np.add.at(a_p, geom.P, out_P)
    np.add.at(a_p, geom.N, in_P)

    dirichlet = kind == DIRICHLET
    Pd = geom.bP[dirichlet]
    Fd = flux_b[dirichlet]
    Db = gamma_b[dirichlet] * geom.b_area[dirichlet] / geom.b_dist[dirichlet]
    np.add.at(a_p, Pd, Db + np.maximum(Fd, 0.0))
    np.add.at(b, Pd, (Db + np.maximum(-Fd, 0.0)) * value[dirichlet])

    neumann = kind == NEUMANN
    Pn = geom.bP[neumann]
    Fn = flux_b[neumann]
    np.add.at(a_p, Pn, np.maximum(Fn, 0.0))
    np.add.at(b, Pn, -np.minimum(Fn, 0.0) * phi[Pn])

    if correction is not None:
        b += correction

    blanked = ~geom.fluid
    a_p[blanked] = 1.0
    b[blanked] = 0.0

    return Coefficients(
        a_p=a_p,
        b=b,
        rows=np.concatenate([geom.P, geom.N]),
        cols=np.concatenate([geom.N, geom.P]),
        a_nb=np.concatenate([in_P, out_P]),
    )


def interpolated_flux(geom: FaceGeometry, u: np.ndarray, v: np.ndarray,
                      bc: BoundaryConditions) -> Tuple[np.ndarray, np.ndarray]:
    uf = geom.w * u[geom.P] + (1.0 - geom.w) * u[geom.N]
    vf = geom.w * v[geom.P] + (1.0 - geom.w) * v[geom.N]
    flux = geom.area * (uf * geom.normal[:, 0] + vf * geom.normal[:, 1])

    flux_b = np.zeros(len(geom.bP))
    inlet = geom.b_tag == FaceTag.INLET
    outlet = geom.b_tag == FaceTag.OUTLET
    flux_b[inlet] = geom.b_area[inlet] * (bc.inlet_velocity or 0.0) * geom.b_normal[inlet, 0]
    Po = geom.bP[outlet]
    flux_b[outlet] = geom.b_area[outlet] * (
        u[Po] * geom.b_normal[outlet, 0] + v[Po] * geom.b_normal[outlet, 1]
    )
    return flux, flux_b


def pressure_boundary_values(p: np.ndarray, mesh: Mesh, geom: FaceGeometry,
                             bc: BoundaryConditions) -> np.ndarray:
    values = boundary_values(p, mesh)
    outlet = geom.b_tag == FaceTag.OUTLET
    values[outlet] = bc.outlet_pressure
    return values


def rhie_chow_flux(
    geom: FaceGeometry,
    flux: np.ndarray,
    flux_b: np.ndarray,
    p: np.ndarray,
    grad_p: np.ndarray,
    d_cell: np.ndarray,
    bc: BoundaryConditions,
) -> Tuple[np.ndarray, np.ndarray]:
    """Momentum-interpolated face fluxes; d_cell is V / a_P of the momentum equation."""
    w = geom.w
    d_f = w * d_cell[geom.P] + (1.0 - w) * d_cell[geom.N]
    grad_f = w[:, None] * grad_p[geom.P] + (1.0 - w)[:, None] * grad_p[geom.N]
    compact = (p[geom.N] - p[geom.P]) / geom.d_PN
    interpolated = np.einsum("ij,ij->i", grad_f, geom.normal)
    flux = flux - geom.area * d_f * (compact - interpolated)

    flux_b = flux_b.copy()
    outlet = geom.b_tag == FaceTag.OUTLET
    Po = geom.bP[outlet]
    compact_b = (bc.outlet_pressure - p[Po]) / geom.b_dist[outlet]
    interpolated_b = np.einsum("ij,ij->i", grad_p[Po], geom.b_normal[outlet])
    flux_b[outlet] -= geom.b_area[outlet] * d_cell[Po] * (compact_b - interpolated_b)
    return flux, flux_b


def mass_imbalance(geom: FaceGeometry, flux: np.ndarray, flux_b: np.ndarray) -> np.ndarray:
    """Net inflow per cell; zero when continuity holds."""
    r = np.zeros(geom.n_cells)
    np.add.at(r, geom.P, -flux)
    np.add.at(r, geom.N, flux)
    np.add.at(r, geom.bP, -flux_b)
    r[~geom.fluid] = 0.0
    return r


def assemble_system(
    mesh: Mesh,
    model: TurbulenceModel,
    bc: BoundaryConditions,
    beta: np.ndarray,
    u: np.ndarray,
    v: np.ndarray,
    p: np.ndarray,
    k: np.ndarray,
    omega: np.ndarray,
    scheme: ConvectionScheme = ConvectionScheme.SECOND_ORDER_UPWIND,
    forcing: float = 0.0,
) -> SystemAssembly:
    """Assemble every equation of the discrete RANS system at one state.

    beta must already carry the solver's lower bound.
    """
    geom = face_geometry(mesh)
    constants = constants_for(model)
    nu = bc.nu
    volumes = mesh.volumes
    two_d = mesh.dimensionality == 2
    turbulent = model != TurbulenceModel.LAMINAR

    kind_u, value_u = boundary_spec(geom, "u", bc, constants)
    kind_v, value_v = boundary_spec(geom, "v", bc, constants)
    grad_u = bc_gradient(u, mesh, geom, kind_u, value_u)
    grad_v = bc_gradient(v, mesh, geom, kind_v, value_v)

    terms = None
    nu_t = np.zeros(mesh.n_cells)
    if turbulent:
        kind_k, value_k = boundary_spec(geom, "k", bc, constants)
        kind_w, value_w = boundary_spec(geom, "omega", bc, constants)
        grad_k = bc_gradient(k, mesh, geom, kind_k, value_k)
        grad_w = bc_gradient(omega, mesh, geom, kind_w, value_w)
        terms = turbulence_terms(mesh, model, constants, nu, grad_u, grad_v, k, omega, grad_k, grad_w)
        nu_t = terms.nu_t

    inlet = geom.b_tag == FaceTag.INLET
    nu_t_inlet = (bc.inlet_k / bc.inlet_omega) if (turbulent and bc.inlet_k and bc.inlet_omega) else 0.0
    wall = geom.b_tag == FaceTag.WALL

    def boundary_gamma(gamma_cell: np.ndarray, inlet_value: float) -> np.ndarray:
        gamma_b = gamma_cell[geom.bP].copy()
        gamma_b[wall] = nu
        gamma_b[inlet] = inlet_value
        return gamma_b

    gamma_m = nu + nu_t
    gamma_mb = boundary_gamma(gamma_m, nu + nu_t_inlet)
    zeros = np.zeros(mesh.n_cells)

    if two_d:
        grad_p = green_gauss(p, mesh, pressure_boundary_values(p, mesh, geom, bc))
        flux0, flux0_b = interpolated_flux(geom, u, v, bc)
        provisional = assemble_scalar(geom, u, gamma_m, gamma_mb, flux0, flux0_b,
                                      kind_u, value_u, zeros, zeros)
        d_cell = volumes / provisional.a_p
        flux, flux_b = rhie_chow_flux(geom, flux0, flux0_b, p, grad_p, d_cell, bc)
    else:
        grad_p = np.zeros((mesh.n_cells, 2))
        flux = np.zeros(len(geom.P))
        flux_b = np.zeros(len(geom.bP))

    second_order = two_d and scheme == ConvectionScheme.SECOND_ORDER_UPWIND

    def correction(phi: np.ndarray, grad: np.ndarray) -> Optional[np.ndarray]:
        return sou_correction(geom, mesh, phi, grad, flux) if second_order else None

    equations: Dict[str, Coefficients] = {}
    source_u = (-grad_p[:, 0] + forcing) * volumes
    equations["u"] = assemble_scalar(geom, u, gamma_m, gamma_mb, flux, flux_b, kind_u, value_u,
                                     source_u, zeros, correction(u, grad_u))
    if two_d:
        source_v = -grad_p[:, 1] * volumes
        equations["v"] = assemble_scalar(geom, v, gamma_m, gamma_mb, flux, flux_b, kind_v, value_v,
                                         source_v, zeros, correction(v, grad_v))

    continuity = None
    continuity_scale = 0.0
    if two_d:
        continuity = mass_imbalance(geom, flux, flux_b)
        continuity_scale = float(np.sum(np.abs(flux)) * 2.0 + np.sum(np.abs(flux_b)))

    if turbulent:
        omega_pos = np.maximum(omega, TINY)
        gamma_k = nu + terms.sigma_k * nu_t
        gamma_w = nu + terms.sigma_w * nu_t
        inlet_sigma_k = constants.sigma_k1 if model == TurbulenceModel.WILCOX else constants.sigma_k2
        inlet_sigma_w = constants.sigma_w1 if model == TurbulenceModel.WILCOX else constants.sigma_w2
        equations["k"] = assemble_scalar(
            geom, k, gamma_k, boundary_gamma(gamma_k, nu + inlet_sigma_k * nu_t_inlet),
            flux, flux_b, kind_k, value_k,
            terms.production_k * volumes,
            constants.beta_star * omega_pos * volumes,
            correction(k, grad_k),
        )
        cross = terms.cross_diffusion * volumes
        equations["omega"] = assemble_scalar(
            geom, omega, gamma_w, boundary_gamma(gamma_w, nu + inlet_sigma_w * nu_t_inlet),
            flux, flux_b, kind_w, value_w,
            beta * terms.production_omega * volumes + np.maximum(cross, 0.0),
            terms.beta * omega_pos * volumes + np.maximum(-cross, 0.0) / omega_pos,
            correction(omega, grad_w),
        )
        near_wall = wall_cells(mesh)
        equations["omega"].pin(near_wall, near_wall_omega(nu, mesh.wall_distance[near_wall], constants))

    return SystemAssembly(
        equations=equations,
        continuity=continuity,
        continuity_scale=continuity_scale,
        terms=terms,
        flux=flux,
        flux_b=flux_b,
        momentum_diag=equations["u"].a_p,
        grad_p=grad_p,
    )
