use std::fmt;

use num_complex::Complex64;

use super::{m_value, spin_up, Operator, MAX_SPINS};
use crate::error::{Error, Result};
use crate::linalg::{matmul, CMatrix, ZERO};

/// Spin operator component, including the raising/lowering combinations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
    Plus,
    Minus,
}

/// Cartesian component used in product-operator labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cartesian {
    X,
    Y,
    Z,
}

impl Cartesian {
    pub const ALL: [Cartesian; 3] = [Cartesian::X, Cartesian::Y, Cartesian::Z];

    pub fn letter(self) -> char {
        match self {
            Cartesian::X => 'x',
            Cartesian::Y => 'y',
            Cartesian::Z => 'z',
        }
    }
}

impl From<Cartesian> for Axis {
    fn from(c: Cartesian) -> Self {
        match c {
            Cartesian::X => Axis::X,
            Cartesian::Y => Axis::Y,
            Cartesian::Z => Axis::Z,
        }
    }
}

/// Spin-1/2 operator for spin `i` (1-based) embedded in an `n`-spin space.
pub fn single_spin_operator(n: usize, i: usize, axis: Axis) -> Result<Operator> {
    if n == 0 || n > MAX_SPINS {
        return Err(Error::schema("n_spins", format!("{n} outside 1..={MAX_SPINS}")));
    }
    if i == 0 || i > n {
        return Err(Error::SpinIndex { index: i, n_spins: n });
    }
    let spin = i - 1;
    let dim = 1usize << n;
    let mut op = CMatrix::from_element(dim, dim, ZERO);
    let flip = 1usize << (n - 1 - spin);
    for s in 0..dim {
        match axis {
            Axis::Z => op[(s, s)] = Complex64::new(m_value(s, n, spin), 0.0),
            _ => {
                let t = s ^ flip;
                // Matrix element <t| op |s>.
                let up = spin_up(s, n, spin);
                let v = match (axis, up) {
                    (Axis::X, _) => Complex64::new(0.5, 0.0),
                    (Axis::Y, true) => Complex64::new(0.0, 0.5),
                    (Axis::Y, false) => Complex64::new(0.0, -0.5),
                    (Axis::Plus, false) => Complex64::new(1.0, 0.0),
                    (Axis::Minus, true) => Complex64::new(1.0, 0.0),
                    _ => ZERO,
                };
                op[(t, s)] = v;
            }
        }
    }
    Ok(op)
}

/// `F_α = Σ_i I_iα`.
pub fn total_operator(n: usize, axis: Axis) -> Operator {
    let dim = 1usize << n;
    let mut acc = CMatrix::zeros(dim, dim);
    for i in 1..=n {
        acc += single_spin_operator(n, i, axis).expect("valid spin index");
    }
    acc
}

/// Deviation density matrix at thermal equilibrium, `Σ_i I_iz`.
pub fn equilibrium_state(n: usize) -> Operator {
    let dim = 1usize << n;
    let mut rho = CMatrix::zeros(dim, dim);
    for s in 0..dim {
        rho[(s, s)] = Complex64::new((0..n).map(|i| m_value(s, n, i)).sum(), 0.0);
    }
    rho
}

/// A product of single-spin Cartesian operators, e.g. `I1x I2z`.
/// The empty label is the identity.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProductOperatorLabel {
    factors: Vec<(usize, Cartesian)>,
}

impl ProductOperatorLabel {
    pub fn new(mut factors: Vec<(usize, Cartesian)>) -> Result<Self> {
        factors.sort_by_key(|f| f.0);
        for w in factors.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::DuplicateSpin(w[0].0));
            }
        }
        if let Some(&(0, _)) = factors.first() {
            return Err(Error::SpinIndex { index: 0, n_spins: MAX_SPINS });
        }
        Ok(Self { factors })
    }

    pub fn identity() -> Self {
        Self { factors: Vec::new() }
    }

    pub fn single(i: usize, axis: Cartesian) -> Self {
        Self { factors: vec![(i, axis)] }
    }

    pub fn factors(&self) -> &[(usize, Cartesian)] {
        &self.factors
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn is_identity(&self) -> bool {
        self.factors.is_empty()
    }

    /// Normalization `2^{q−1}` of the basis operator (½ for the identity).
    pub fn prefactor(&self) -> f64 {
        2f64.powi(self.factors.len() as i32 - 1)
    }

    /// Raw product in expression syntax, e.g. `I1x.I2z`.
    pub fn product_string(&self) -> String {
        if self.factors.is_empty() {
            return "E".to_string();
        }
        self.factors
            .iter()
            .map(|(i, a)| format!("I{i}{}", a.letter()))
            .collect::<Vec<_>>()
            .join(".")
    }

    /// The basis operator in expression syntax, e.g. `2*I1x.I2z`.
    pub fn to_expression(&self) -> String {
        match self.factors.len() {
            0 => "0.5*E".to_string(),
            1 => self.product_string(),
            _ => format!("{}*{}", self.prefactor(), self.product_string()),
        }
    }

    fn check_range(&self, n: usize) -> Result<()> {
        match self.factors.last() {
            Some(&(i, _)) if i > n => Err(Error::SpinIndex { index: i, n_spins: n }),
            _ => Ok(()),
        }
    }
}

/// Conventional name: `I1x`, `2I1xI2z`, `4I1zI2zI5x`; `E/2` for the identity.
impl fmt::Display for ProductOperatorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.factors.is_empty() {
            return write!(f, "E/2");
        }
        if self.factors.len() > 1 {
            write!(f, "{}", 1u64 << (self.factors.len() - 1))?;
        }
        for (i, a) in &self.factors {
            write!(f, "I{i}{}", a.letter())?;
        }
        Ok(())
    }
}

/// Raw product `Π I_{i α}` with unit prefactor (identity for the empty label).
fn raw_product(n: usize, label: &ProductOperatorLabel) -> Result<Operator> {
    label.check_range(n)?;
    let dim = 1usize << n;
    let mut acc = CMatrix::identity(dim, dim);
    for &(i, a) in label.factors() {
        acc = matmul(&acc, &single_spin_operator(n, i, a.into())?);
    }
    Ok(acc)
}

/// Normalized basis operator `B = 2^{q−1} Π_k I_{i_k α_k}`; satisfies
/// `Tr(B_r B_s) = δ_rs 2^{n−2}`.
pub fn product_operator(n: usize, label: &ProductOperatorLabel) -> Result<Operator> {
    let raw = raw_product(n, label)?;
    Ok(raw * Complex64::new(label.prefactor(), 0.0))
}

/// All `4^n` labels (identity first), in lexicographic order of the
/// per-spin component `{E, x, y, z}` with spin 1 most significant.
pub fn basis_labels(n: usize) -> Vec<ProductOperatorLabel> {
    let total = 1usize << (2 * n);
    (0..total)
        .map(|code| {
            let mut factors = Vec::new();
            for spin in 0..n {
                let digit = (code >> (2 * (n - 1 - spin))) & 3;
                if digit > 0 {
                    factors.push((spin + 1, Cartesian::ALL[digit - 1]));
                }
            }
            ProductOperatorLabel { factors }
        })
        .collect()
}

/// Linear combination of raw products, written as e.g.
/// `0.38*I5x - 1.32*I1z.I2z.I5x`. Coefficients multiply the raw product (no
/// `2^{q−1}` normalization), so `-4*I1z.I2z.I5x` is `−4 I1z I2z I5x`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorExpr {
    pub terms: Vec<(f64, ProductOperatorLabel)>,
}

impl OperatorExpr {
    pub fn parse(text: &str) -> Result<Self> {
        let err = |m: &str| Error::Expression { expr: text.to_string(), message: m.to_string() };
        let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        if compact.is_empty() {
            return Err(err("empty expression"));
        }
        // Split into signed terms at top-level '+'/'-' that do not belong to
        // an exponent.
        let bytes = compact.as_bytes();
        let mut starts = vec![0usize];
        for k in 1..bytes.len() {
            let c = bytes[k];
            let prev = bytes[k - 1];
            if (c == b'+' || c == b'-') && prev != b'e' && prev != b'E' && prev != b'*' {
                starts.push(k);
            }
        }
        starts.push(bytes.len());
        let mut terms = Vec::new();
        for w in starts.windows(2) {
            let raw = &compact[w[0]..w[1]];
            let (sign, body) = match raw.as_bytes().first() {
                Some(b'-') => (-1.0, &raw[1..]),
                Some(b'+') => (1.0, &raw[1..]),
                _ => (1.0, raw),
            };
            if body.is_empty() {
                return Err(err("dangling sign"));
            }
            let (coef, product) = match body.split_once('*') {
                Some((c, p)) => {
                    let v: f64 = c.parse().map_err(|_| err(&format!("bad coefficient `{c}`")))?;
                    (v, p)
                }
                None => (1.0, body),
            };
            if !coef.is_finite() {
                return Err(err("non-finite coefficient"));
            }
            let mut factors = Vec::new();
            for f in product.split('.') {
                factors.push(parse_factor(f).ok_or_else(|| err(&format!("bad factor `{f}`")))?);
            }
            let label = ProductOperatorLabel::new(factors).map_err(|e| err(&e.to_string()))?;
            terms.push((sign * coef, label));
        }
        Ok(Self { terms })
    }

    /// Builds the matrix on `n` spins.
    pub fn to_operator(&self, n: usize) -> Result<Operator> {
        let dim = 1usize << n;
        let mut acc = CMatrix::zeros(dim, dim);
        for (c, label) in &self.terms {
            acc += raw_product(n, label)? * Complex64::new(*c, 0.0);
        }
        Ok(acc)
    }

    pub fn max_spin_index(&self) -> usize {
        self.terms
            .iter()
            .filter_map(|(_, l)| l.factors().last().map(|f| f.0))
            .max()
            .unwrap_or(0)
    }
}

fn parse_factor(f: &str) -> Option<(usize, Cartesian)> {
    let rest = f.strip_prefix('I')?;
    let (digits, axis) = rest.split_at(rest.len().checked_sub(1)?);
    let axis = match axis {
        "x" => Cartesian::X,
        "y" => Cartesian::Y,
        "z" => Cartesian::Z,
        _ => return None,
    };
    let idx: usize = digits.parse().ok()?;
    (idx >= 1).then_some((idx, axis))
}

impl fmt::Display for OperatorExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, (c, label)) in self.terms.iter().enumerate() {
            let mag = c.abs();
            match (k, *c < 0.0) {
                (0, true) => write!(f, "-")?,
                (0, false) => {}
                (_, true) => write!(f, " - ")?,
                (_, false) => write!(f, " + ")?,
            }
            write!(f, "{mag}*{}", label.product_string())?;
        }
        Ok(())
    }
}
