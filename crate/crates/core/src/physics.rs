//! Nondimensional groups and the four PDE residuals (energy, x/y momentum,
//! continuity) evaluated on network output jets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::difftape::{Tape, Var};
use crate::error::{Error, Result};
use crate::network::NetOutputJet;

/// Liquid-metal properties and the temperature endpoints of the melt pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialProps {
    /// Density, kg/m³.
    pub rho: f64,
    /// Dynamic viscosity, Pa·s.
    pub mu: f64,
    /// Heat capacity, J/(kg·K).
    pub cp: f64,
    /// Thermal conductivity, W/(m·K).
    pub k: f64,
    /// Liquidus temperature (curved wall), K.
    pub t_liquidus: f64,
    /// Evaporation temperature (top surface), K.
    pub t_evaporation: f64,
}

impl MaterialProps {
    /// Liquid SS 316L.
    pub const SS316L: MaterialProps = MaterialProps {
        rho: 6500.0,
        mu: 0.006,
        cp: 830.0,
        k: 35.0,
        t_liquidus: 1723.0,
        t_evaporation: 3090.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rho", self.rho),
            ("mu", self.mu),
            ("cp", self.cp),
            ("k", self.k),
            ("t_liquidus", self.t_liquidus),
            ("t_evaporation", self.t_evaporation),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if self.t_evaporation <= self.t_liquidus {
            return Err(Error::Domain("t_evaporation must exceed t_liquidus".into()));
        }
        Ok(())
    }

    /// Parses a `key = value` document (TOML syntax).
    pub fn parse(text: &str) -> Result<Self> {
        let props: MaterialProps =
            toml::from_str(text).map_err(|e| Error::Format(format!("material file: {e}")))?;
        props.validate()?;
        Ok(props)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("plain struct serializes")
    }
}

/// Dimensional reference scales behind a [`NondimParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub u_ref: f64,
    pub length: f64,
    pub rho: f64,
    pub t_liquidus: f64,
    pub t_evaporation: f64,
}

impl Scales {
    pub fn time(&self) -> f64 {
        self.length / self.u_ref
    }

    pub fn pressure(&self) -> f64 {
        self.rho * self.u_ref * self.u_ref
    }

    /// T* = (T - T_liquidus) / (T_evaporation - T_liquidus)
    pub fn nondim_temperature(&self, kelvin: f64) -> f64 {
        (kelvin - self.t_liquidus) / (self.t_evaporation - self.t_liquidus)
    }

    pub fn kelvin(&self, t_star: f64) -> f64 {
        self.t_liquidus + t_star * (self.t_evaporation - self.t_liquidus)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NondimParams {
    pub re: f64,
    pub pe: f64,
    pub scales: Option<Scales>,
}

impl NondimParams {
    pub fn new(re: f64, pe: f64) -> Result<Self> {
        if !(re > 0.0 && re.is_finite() && pe > 0.0 && pe.is_finite()) {
            return Err(Error::Domain(format!("Re and Pe must be positive, got {re}, {pe}")));
        }
        Ok(NondimParams { re, pe, scales: None })
    }

    /// Re = ρ D U / μ and Pe = U D ρ c_p / k.
    pub fn from_material(props: &MaterialProps, u_ref: f64, length: f64) -> Result<Self> {
        props.validate()?;
        if !(u_ref > 0.0 && length > 0.0) {
            return Err(Error::Domain("reference velocity and length must be positive".into()));
        }
        let re = props.rho * length * u_ref / props.mu;
        let pe = u_ref * length * props.rho * props.cp / props.k;
        Ok(NondimParams {
            re,
            pe,
            scales: Some(Scales {
                u_ref,
                length,
                rho: props.rho,
                t_liquidus: props.t_liquidus,
                t_evaporation: props.t_evaporation,
            }),
        })
    }
}

/// Energy, x-momentum, y-momentum and mass residuals at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResidualQuad {
    pub f_t: f64,
    pub f_u: f64,
    pub f_v: f64,
    pub f_m: f64,
}

impl ResidualQuad {
    pub fn sum_sq(&self) -> f64 {
        self.f_t * self.f_t + self.f_u * self.f_u + self.f_v * self.f_v + self.f_m * self.f_m
    }
}

/// Scalar arithmetic the residual formulas need, over plain floats or tape nodes.
pub trait Arith {
    type S: Copy;
    fn add(&mut self, a: Self::S, b: Self::S) -> Result<Self::S>;
    fn sub(&mut self, a: Self::S, b: Self::S) -> Result<Self::S>;
    fn mul(&mut self, a: Self::S, b: Self::S) -> Result<Self::S>;
}

/// Plain `f64` arithmetic.
pub struct Float;

impl Arith for Float {
    type S = f64;
    fn add(&mut self, a: f64, b: f64) -> Result<f64> {
        Ok(a + b)
    }
    fn sub(&mut self, a: f64, b: f64) -> Result<f64> {
        Ok(a - b)
    }
    fn mul(&mut self, a: f64, b: f64) -> Result<f64> {
        Ok(a * b)
    }
}

impl Arith for Tape {
    type S = Var;
    fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        Tape::add(self, a, b)
    }
    fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        Tape::sub(self, a, b)
    }
    fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        Tape::mul(self, a, b)
    }
}

/// `[f_T, f_u, f_v, f_m]` with diffusion coefficients `inv_re = 1/Re`, `inv_pe = 1/Pe`.
pub fn residuals_with<A: Arith>(
    ar: &mut A,
    j: &NetOutputJet<A::S>,
    inv_re: A::S,
    inv_pe: A::S,
) -> Result<[A::S; 4]> {
    let (u, v) = (j.u.v, j.v.v);
    // transport: ∂q/∂t + u ∂q/∂x + v ∂q/∂y - κ ∇²q
    let mut transport = |q: &crate::difftape::Jet2<A::S>, kappa: A::S| -> Result<A::S> {
        let ux = ar.mul(u, q.d_x)?;
        let vy = ar.mul(v, q.d_y)?;
        let conv = ar.add(ux, vy)?;
        let lhs = ar.add(q.d_t, conv)?;
        let lap = ar.add(q.d_xx, q.d_yy)?;
        let diff = ar.mul(kappa, lap)?;
        ar.sub(lhs, diff)
    };
    let f_t = transport(&j.temp, inv_pe)?;
    let mu = transport(&j.u, inv_re)?;
    let mv = transport(&j.v, inv_re)?;
    let f_u = ar.add(mu, j.p.d_x)?;
    let f_v = ar.add(mv, j.p.d_y)?;
    let f_m = ar.add(j.u.d_x, j.v.d_y)?;
    Ok([f_t, f_u, f_v, f_m])
}

pub fn residuals(jets: &NetOutputJet, nd: &NondimParams) -> ResidualQuad {
    let [f_t, f_u, f_v, f_m] = residuals_with(&mut Float, jets, 1.0 / nd.re, 1.0 / nd.pe)
        .expect("float arithmetic is infallible");
    ResidualQuad { f_t, f_u, f_v, f_m }
}
