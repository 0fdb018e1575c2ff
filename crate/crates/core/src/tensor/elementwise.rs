//! Pointwise operations. Binary ops require identical shapes; callers
//! broadcast explicitly first so gradient reduction stays in one place.

use super::{Arr, Var};

impl<'t> Var<'t> {
    fn binary(
        &self,
        other: &Var<'t>,
        value: Arr,
        db_self: impl Fn(&Arr) -> Arr + 'static,
        db_other: impl Fn(&Arr) -> Arr + 'static,
    ) -> Var<'t> {
        self.same_tape(other);
        let (i, j) = (self.index(), other.index());
        self.make(
            value,
            Box::new(move |g, sink| {
                sink(i, db_self(g));
                sink(j, db_other(g));
            }),
        )
    }

    fn unary(&self, value: Arr, db: impl Fn(&Arr) -> Arr + 'static) -> Var<'t> {
        let i = self.index();
        self.make(value, Box::new(move |g, sink| sink(i, db(g))))
    }

    pub fn add(&self, other: &Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "add: shape mismatch");
        self.binary(other, &*a + &*b, |g| g.clone(), |g| g.clone())
    }

    pub fn sub(&self, other: &Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "sub: shape mismatch");
        self.binary(other, &*a - &*b, |g| g.clone(), |g| -g)
    }

    pub fn mul(&self, other: &Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "mul: shape mismatch");
        let (ac, bc) = (a.clone(), b.clone());
        self.binary(other, &*a * &*b, move |g| g * &*bc, move |g| g * &*ac)
    }

    pub fn div(&self, other: &Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "div: shape mismatch");
        let (ac, b1, b2) = (a.clone(), b.clone(), b.clone());
        self.binary(
            other,
            &*a / &*b,
            move |g| g / &*b1,
            move |g| -(g * &*ac) / (&*b2 * &*b2),
        )
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(-&*self.value(), |g| -g)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(&*self.value() * c, move |g| g * c)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(&*self.value() + c, |g| g.clone())
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let y = self.value().mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let yc = y.clone();
        self.unary(y, move |g| g * &yc.mapv(|s| s * (1.0 - s)))
    }

    pub fn tanh(&self) -> Var<'t> {
        let y = self.value().mapv(f64::tanh);
        let yc = y.clone();
        self.unary(y, move |g| g * &yc.mapv(|s| 1.0 - s * s))
    }

    pub fn relu(&self) -> Var<'t> {
        let x = self.value();
        let y = x.mapv(|v| v.max(0.0));
        let xc = x.clone();
        self.unary(y, move |g| g * &xc.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }))
    }

    /// Hyperbolic-tangent form of the Gaussian error linear unit.
    pub fn gelu(&self) -> Var<'t> {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044_715;
        let x = self.value();
        let y = x.mapv(|v| 0.5 * v * (1.0 + (C * (v + A * v * v * v)).tanh()));
        let xc = x.clone();
        self.unary(y, move |g| {
            g * &xc.mapv(|v| {
                let u = C * (v + A * v * v * v);
                let t = u.tanh();
                let du = C * (1.0 + 3.0 * A * v * v);
                0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du
            })
        })
    }

    pub fn exp(&self) -> Var<'t> {
        let y = self.value().mapv(f64::exp);
        let yc = y.clone();
        self.unary(y, move |g| g * &yc)
    }

    pub fn ln(&self) -> Var<'t> {
        let x = self.value();
        let xc = x.clone();
        self.unary(x.mapv(f64::ln), move |g| g / &*xc)
    }

    /// Subgradient 0 at the origin.
    pub fn abs(&self) -> Var<'t> {
        let x = self.value();
        let xc = x.clone();
        self.unary(x.mapv(f64::abs), move |g| g * &xc.mapv(f64::signum))
    }

    pub fn powf_const(&self, p: f64) -> Var<'t> {
        let x = self.value();
        let xc = x.clone();
        self.unary(x.mapv(|v| v.powf(p)), move |g| {
            g * &xc.mapv(|v| p * v.powf(p - 1.0))
        })
    }

    pub fn sqrt(&self) -> Var<'t> {
        let y = self.value().mapv(f64::sqrt);
        let yc = y.clone();
        self.unary(y, move |g| g / &(&yc * 2.0))
    }

    /// Gradient passes through strictly inside the interval, zero outside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        let x = self.value();
        let xc = x.clone();
        self.unary(x.mapv(|v| v.clamp(lo, hi)), move |g| {
            g * &xc.mapv(|v| if v > lo && v < hi { 1.0 } else { 0.0 })
        })
    }
}
