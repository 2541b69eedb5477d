//! Planar floating-base rigid-body model with two 2-link legs.
//!
//! Generalized coordinates are `[x, z, pitch, front_hip, front_knee, rear_hip, rear_knee]`.
//! Pitch is counter-clockwise positive with `x` forward and `z` up. A hip angle
//! of zero points the thigh straight down from the torso; knee angles are
//! relative to the thigh.

use nalgebra::{SMatrix, SVector};

pub const NQ: usize = 7;
pub const NJ: usize = 4;

pub type Vec7 = SVector<f64, NQ>;
type Mat7 = SMatrix<f64, NQ, NQ>;

/// Link angles: torso, front thigh, front shank, rear thigh, rear shank.
const N_ANGLES: usize = 5;
/// Generalized coordinates each link angle is a sum of.
const ANGLE_DEPS: [&[usize]; N_ANGLES] = [&[2], &[2, 3], &[2, 3, 4], &[2, 5], &[2, 5, 6]];

#[derive(Clone, Debug, PartialEq)]
pub struct Body {
    pub torso_mass: f64,
    pub torso_half_length: f64,
    pub thigh_mass: f64,
    pub thigh_length: f64,
    pub shank_mass: f64,
    pub shank_length: f64,
    pub gravity: f64,
    /// Viscous friction in every joint, N·m·s/rad.
    pub joint_damping: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ground {
    pub stiffness: f64,
    pub damping: f64,
    pub friction: f64,
    /// Tangential speed at which friction reaches ~76% of its Coulomb bound.
    pub slip_velocity: f64,
    pub slope_rad: f64,
}

impl Ground {
    /// Unit normal and unit uphill tangent of the ground plane through the origin.
    pub fn frame(&self) -> ([f64; 2], [f64; 2]) {
        let (s, c) = self.slope_rad.sin_cos();
        ([-s, c], [c, s])
    }

    /// Signed distance of a point above the plane.
    pub fn height(&self, p: [f64; 2]) -> f64 {
        let (n, _) = self.frame();
        p[0] * n[0] + p[1] * n[1]
    }
}

/// A point on the robot expressed as `base + Σ c·dir(angle_k)`.
#[derive(Clone, Copy, Debug)]
struct PointSpec {
    terms: [(f64, usize); 3],
    len: usize,
}

impl PointSpec {
    fn new(terms: &[(f64, usize)]) -> Self {
        let mut t = [(0.0, 0); 3];
        t[..terms.len()].copy_from_slice(terms);
        Self {
            terms: t,
            len: terms.len(),
        }
    }
}

/// Per-configuration kinematic quantities.
struct Kinematics {
    phi: [f64; N_ANGLES],
    phid: [f64; N_ANGLES],
}

impl Kinematics {
    fn new(q: &Vec7, qd: &Vec7) -> Self {
        let mut phi = [0.0; N_ANGLES];
        let mut phid = [0.0; N_ANGLES];
        for (k, deps) in ANGLE_DEPS.iter().enumerate() {
            phi[k] = deps.iter().map(|&j| q[j]).sum();
            phid[k] = deps.iter().map(|&j| qd[j]).sum();
        }
        // Legs hang down at zero joint angle.
        for p in &mut phi[1..] {
            *p -= std::f64::consts::FRAC_PI_2;
        }
        Self { phi, phid }
    }

    fn position(&self, q: &Vec7, p: &PointSpec) -> [f64; 2] {
        let mut out = [q[0], q[1]];
        for &(c, k) in &p.terms[..p.len] {
            out[0] += c * self.phi[k].cos();
            out[1] += c * self.phi[k].sin();
        }
        out
    }

    /// Translational Jacobian (2×7, row-major) of a point.
    fn jacobian(&self, p: &PointSpec) -> [[f64; NQ]; 2] {
        let mut j = [[0.0; NQ]; 2];
        j[0][0] = 1.0;
        j[1][1] = 1.0;
        for &(c, k) in &p.terms[..p.len] {
            let (s, co) = self.phi[k].sin_cos();
            for &dof in ANGLE_DEPS[k] {
                j[0][dof] -= c * s;
                j[1][dof] += c * co;
            }
        }
        j
    }

    /// Velocity-product acceleration `J̇·q̇` of a point.
    fn bias(&self, p: &PointSpec) -> [f64; 2] {
        let mut b = [0.0; 2];
        for &(c, k) in &p.terms[..p.len] {
            let w2 = self.phid[k] * self.phid[k];
            b[0] -= c * w2 * self.phi[k].cos();
            b[1] -= c * w2 * self.phi[k].sin();
        }
        b
    }
}

fn j_dot(j: &[[f64; NQ]; 2], v: &Vec7) -> [f64; 2] {
    let mut out = [0.0; 2];
    for r in 0..2 {
        out[r] = (0..NQ).map(|c| j[r][c] * v[c]).sum();
    }
    out
}

/// Contact points in a fixed order: front foot, rear foot, front knee, rear knee, torso front, torso rear.
pub const N_CONTACTS: usize = 6;

pub struct Model {
    pub body: Body,
    pub ground: Ground,
    bodies: Vec<(f64, f64, usize, PointSpec)>,
    contacts: [PointSpec; N_CONTACTS],
    /// Generalized coordinates held fixed (their rows are replaced by `q̈ = 0`).
    locked: [bool; NQ],
}

impl Model {
    pub fn new(body: Body, ground: Ground, locked_joint: Option<usize>) -> Self {
        let h = body.torso_half_length;
        let (lt, ls) = (body.thigh_length, body.shank_length);
        let mut bodies = vec![(
            body.torso_mass,
            body.torso_mass * (2.0 * h).powi(2) / 12.0,
            0,
            PointSpec::new(&[]),
        )];
        let mut contacts = Vec::new();
        let mut knees = Vec::new();
        for (side, thigh, shank) in [(1.0, 1, 2), (-1.0, 3, 4)] {
            bodies.push((
                body.thigh_mass,
                body.thigh_mass * lt * lt / 12.0,
                thigh,
                PointSpec::new(&[(side * h, 0), (lt / 2.0, thigh)]),
            ));
            bodies.push((
                body.shank_mass,
                body.shank_mass * ls * ls / 12.0,
                shank,
                PointSpec::new(&[(side * h, 0), (lt, thigh), (ls / 2.0, shank)]),
            ));
            contacts.push(PointSpec::new(&[(side * h, 0), (lt, thigh), (ls, shank)]));
            knees.push(PointSpec::new(&[(side * h, 0), (lt, thigh)]));
        }
        contacts.extend(knees);
        contacts.push(PointSpec::new(&[(h, 0)]));
        contacts.push(PointSpec::new(&[(-h, 0)]));
        let mut locked = [false; NQ];
        if let Some(j) = locked_joint {
            locked[3 + j] = true;
        }
        Self {
            body,
            ground,
            bodies,
            contacts: contacts.try_into().unwrap_or_else(|_| unreachable!()),
            locked,
        }
    }

    /// World position of contact point `i`.
    pub fn contact_position(&self, q: &Vec7, i: usize) -> [f64; 2] {
        Kinematics::new(q, &Vec7::zeros()).position(q, &self.contacts[i])
    }

    pub fn feet(&self, q: &Vec7) -> [[f64; 2]; 2] {
        [self.contact_position(q, 0), self.contact_position(q, 1)]
    }

    pub fn mass_matrix(&self, q: &Vec7) -> Mat7 {
        let kin = Kinematics::new(q, &Vec7::zeros());
        self.mass_matrix_with(&kin)
    }

    fn mass_matrix_with(&self, kin: &Kinematics) -> Mat7 {
        let mut m = Mat7::zeros();
        for (mass, inertia, angle, spec) in &self.bodies {
            let j = kin.jacobian(spec);
            for a in 0..NQ {
                for b in 0..NQ {
                    m[(a, b)] += mass * (j[0][a] * j[0][b] + j[1][a] * j[1][b]);
                }
            }
            let deps = ANGLE_DEPS[*angle];
            for &a in deps {
                for &b in deps {
                    m[(a, b)] += inertia;
                }
            }
        }
        m
    }

    /// Applies the inelastic impulse along coordinate `c` that brings `q̇_c` to zero.
    pub fn stop_coordinate(&self, q: &Vec7, qd: &mut Vec7, c: usize) {
        let mut m = self.mass_matrix(q);
        self.lock_rows(&mut m, None);
        let Some(ch) = m.cholesky() else { return };
        let mut e = Vec7::zeros();
        e[c] = 1.0;
        let col = ch.solve(&e);
        if col[c] > 0.0 {
            *qd -= col * (qd[c] / col[c]);
        }
        qd[c] = 0.0;
    }

    fn lock_rows(&self, m: &mut Mat7, mut rhs: Option<&mut Vec7>) {
        for (c, &locked) in self.locked.iter().enumerate() {
            if locked {
                for k in 0..NQ {
                    m[(c, k)] = 0.0;
                    m[(k, c)] = 0.0;
                }
                m[(c, c)] = 1.0;
                if let Some(r) = rhs.as_deref_mut() {
                    r[c] = 0.0;
                }
            }
        }
    }

    /// Kinetic plus gravitational potential energy.
    pub fn energy(&self, q: &Vec7, qd: &Vec7) -> f64 {
        let kin = Kinematics::new(q, qd);
        let kinetic = 0.5 * qd.dot(&(self.mass_matrix_with(&kin) * qd));
        let potential: f64 = self
            .bodies
            .iter()
            .map(|(m, _, _, spec)| m * self.body.gravity * kin.position(q, spec)[1])
            .sum();
        kinetic + potential
    }

    /// Advances `(q, q̇)` by `dt` with joint torques `tau` using semi-implicit Euler.
    ///
    /// Contact damping and friction are linearized and treated implicitly so
    /// stiff ground parameters stay stable at millisecond steps.
    pub fn step(&self, q: &mut Vec7, qd: &mut Vec7, tau: &[f64; NJ], dt: f64) {
        let kin = Kinematics::new(q, qd);
        let mut m = self.mass_matrix_with(&kin);
        let mut rhs = Vec7::zeros();
        let g = self.body.gravity;

        for (mass, _, _, spec) in &self.bodies {
            let j = kin.jacobian(spec);
            let b = kin.bias(spec);
            let f = [-mass * b[0], -mass * (g + b[1])];
            for c in 0..NQ {
                rhs[c] += j[0][c] * f[0] + j[1][c] * f[1];
            }
        }
        for (k, &t) in tau.iter().enumerate() {
            rhs[3 + k] += t - self.body.joint_damping * qd[3 + k];
        }

        let (n, t) = self.ground.frame();
        for spec in &self.contacts {
            let p = kin.position(q, spec);
            let depth = -(p[0] * n[0] + p[1] * n[1]);
            if depth <= 0.0 {
                continue;
            }
            let j = kin.jacobian(spec);
            let v = j_dot(&j, qd);
            let vn = v[0] * n[0] + v[1] * n[1];
            let vt = v[0] * t[0] + v[1] * t[1];
            let fn_raw = self.ground.stiffness * depth - self.ground.damping * vn;
            if fn_raw <= 0.0 {
                continue;
            }
            let vs = self.ground.slip_velocity;
            let th = (vt / vs).tanh();
            let ft = -self.ground.friction * fn_raw * th;
            let force = [fn_raw * n[0] + ft * t[0], fn_raw * n[1] + ft * t[1]];
            let dn = self.ground.damping;
            let dt_coef = self.ground.friction * fn_raw * (1.0 - th * th) / vs;
            // Projected Jacobian rows along the normal and tangent.
            let mut jn = [0.0; NQ];
            let mut jt = [0.0; NQ];
            for c in 0..NQ {
                rhs[c] += j[0][c] * force[0] + j[1][c] * force[1];
                jn[c] = j[0][c] * n[0] + j[1][c] * n[1];
                jt[c] = j[0][c] * t[0] + j[1][c] * t[1];
            }
            for a in 0..NQ {
                for b in 0..NQ {
                    m[(a, b)] += dt * (dn * jn[a] * jn[b] + dt_coef * jt[a] * jt[b]);
                }
            }
        }

        self.lock_rows(&mut m, Some(&mut rhs));
        for (c, &locked) in self.locked.iter().enumerate() {
            if locked {
                qd[c] = 0.0;
            }
        }

        let qdd = match m.cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => Vec7::from_element(f64::NAN),
        };
        *qd += qdd * dt;
        *q += *qd * dt;
    }
}
