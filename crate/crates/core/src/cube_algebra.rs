//! Exact-integer cubes, their slice forms, and the form class group.
//!
//! A cube is a 2×2×2 integer array `c[i][j][k]`. Slicing it along each of the
//! three axes gives a pair of 2×2 matrices `(M, N)`, and each pair defines the
//! binary quadratic form `Q(x, y) = -det(M x + N y)`. The three forms obtained
//! this way always share one discriminant.
//!
//! Positive-definite forms of a fixed negative discriminant are composed with
//! Dirichlet composition followed by Gauss reduction.

use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlgebraError {
    #[error("form {0} is not positive definite")]
    NotPositiveDefinite(BinaryQuadraticForm),
    #[error("form {0} is not primitive")]
    NotPrimitive(BinaryQuadraticForm),
    #[error("discriminants differ: {left} vs {right}")]
    DiscriminantMismatch { left: i128, right: i128 },
}

/// A 2×2×2 integer cube. Entry `(i, j, k)` lives at flat index `4i + 2j + k`,
/// so the vertex labels `a..h` are the flat entries in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Cube {
    entries: [i64; 8],
}

impl Cube {
    pub fn new(entries: [i64; 8]) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[i64; 8] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> i64 {
        self.entries[4 * i + 2 * j + k]
    }
}

/// `a x² + b xy + c y²` with exact integer coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinaryQuadraticForm {
    pub a: i128,
    pub b: i128,
    pub c: i128,
}

impl fmt::Display for BinaryQuadraticForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.a, self.b, self.c)
    }
}

impl BinaryQuadraticForm {
    pub const fn new(a: i128, b: i128, c: i128) -> Self {
        Self { a, b, c }
    }

    /// The principal form of discriminant `d`, i.e. the class-group identity.
    /// Returns `None` unless `d < 0` and `d ≡ 0, 1 (mod 4)`.
    pub fn principal(d: i128) -> Option<Self> {
        if d >= 0 {
            return None;
        }
        match d.rem_euclid(4) {
            0 => Some(Self::new(1, 0, -d / 4)),
            1 => Some(Self::new(1, 1, (1 - d) / 4)),
            _ => None,
        }
    }

    pub fn discriminant(&self) -> i128 {
        self.b * self.b - 4 * self.a * self.c
    }

    pub fn is_primitive(&self) -> bool {
        self.a.gcd(&self.b).gcd(&self.c) == 1
    }

    pub fn is_positive_definite(&self) -> bool {
        self.a > 0 && self.discriminant() < 0
    }

    /// Inverse class: `(a, -b, c)`.
    pub fn inverse(&self) -> Self {
        Self::new(self.a, -self.b, self.c)
    }

    pub fn is_reduced(&self) -> bool {
        let (a, b, c) = (self.a, self.b, self.c);
        b.abs() <= a && a <= c && !(b < 0 && (b.abs() == a || a == c))
    }

    pub fn eval(&self, x: i128, y: i128) -> i128 {
        self.a * x * x + self.b * x * y + self.c * y * y
    }

    fn check_composable(&self) -> Result<(), AlgebraError> {
        if !self.is_positive_definite() {
            return Err(AlgebraError::NotPositiveDefinite(*self));
        }
        if !self.is_primitive() {
            return Err(AlgebraError::NotPrimitive(*self));
        }
        Ok(())
    }
}

pub fn discriminant(form: &BinaryQuadraticForm) -> i128 {
    form.discriminant()
}

fn det2(m: [[i128; 2]; 2]) -> i128 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

fn form_from_slices(m: [[i128; 2]; 2], n: [[i128; 2]; 2]) -> BinaryQuadraticForm {
    let det_m = det2(m);
    let det_n = det2(n);
    let sum = [
        [m[0][0] + n[0][0], m[0][1] + n[0][1]],
        [m[1][0] + n[1][0], m[1][1] + n[1][1]],
    ];
    BinaryQuadraticForm::new(-det_m, -(det2(sum) - det_m - det_n), -det_n)
}

/// The three slice forms `(Q₁, Q₂, Q₃)` of a cube, one per slicing axis.
pub fn slice_forms(cube: &Cube) -> [BinaryQuadraticForm; 3] {
    let c = |i, j, k| cube.get(i, j, k) as i128;
    [
        form_from_slices(
            [[c(0, 0, 0), c(0, 0, 1)], [c(0, 1, 0), c(0, 1, 1)]],
            [[c(1, 0, 0), c(1, 0, 1)], [c(1, 1, 0), c(1, 1, 1)]],
        ),
        form_from_slices(
            [[c(0, 0, 0), c(0, 1, 0)], [c(1, 0, 0), c(1, 1, 0)]],
            [[c(0, 0, 1), c(0, 1, 1)], [c(1, 0, 1), c(1, 1, 1)]],
        ),
        form_from_slices(
            [[c(0, 0, 0), c(1, 0, 0)], [c(0, 0, 1), c(1, 0, 1)]],
            [[c(0, 1, 0), c(1, 1, 0)], [c(0, 1, 1), c(1, 1, 1)]],
        ),
    ]
}

/// Gauss reduction to the unique reduced form in the same proper equivalence
/// class.
pub fn reduce(form: &BinaryQuadraticForm) -> Result<BinaryQuadraticForm, AlgebraError> {
    form.check_composable()?;
    let BinaryQuadraticForm { mut a, mut b, mut c } = *form;
    loop {
        if !(-a < b && b <= a) {
            // x -> x - k y moves b to b - 2ak; pick k so that b lands in (-a, a].
            let k = Integer::div_ceil(&(b - a), &(2 * a));
            let nb = b - 2 * a * k;
            c = a * k * k - b * k + c;
            b = nb;
        }
        if a > c {
            // (x, y) -> (-y, x)
            (a, b, c) = (c, -b, a);
            continue;
        }
        if a == c && b < 0 {
            b = -b;
        }
        return Ok(BinaryQuadraticForm::new(a, b, c));
    }
}

/// Returns `(g, u, v)` with `u x + v y = g = gcd(x, y) ≥ 0`.
fn extended_gcd(x: i128, y: i128) -> (i128, i128, i128) {
    let e = x.extended_gcd(&y);
    if e.gcd < 0 {
        (-e.gcd, -e.x, -e.y)
    } else {
        (e.gcd, e.x, e.y)
    }
}

/// Dirichlet composition of two primitive positive-definite forms of equal
/// discriminant, returned reduced.
pub fn compose_forms(
    f: &BinaryQuadraticForm,
    g: &BinaryQuadraticForm,
) -> Result<BinaryQuadraticForm, AlgebraError> {
    f.check_composable()?;
    g.check_composable()?;
    let disc = f.discriminant();
    if disc != g.discriminant() {
        return Err(AlgebraError::DiscriminantMismatch {
            left: disc,
            right: g.discriminant(),
        });
    }

    let (f1, f2) = if f.a > g.a { (g, f) } else { (f, g) };
    let (a1, b1) = (f1.a, f1.b);
    let (a2, b2, c2) = (f2.a, f2.b, f2.c);

    // b1 ≡ b2 (mod 2) since both share the discriminant.
    let s = (b1 + b2) / 2;
    let n = b2 - s;

    let (d, y1) = if a2 % a1 == 0 {
        (a1, 0)
    } else {
        let (d, u, _) = extended_gcd(a2, a1);
        (d, u)
    };
    // e = gcd(a1, a2, s)
    let (e, x2, y2) = if s % d == 0 {
        (d, 0, -1)
    } else {
        let (e, u, v) = extended_gcd(s, d);
        (e, u, -v)
    };

    let v1 = a1 / e;
    let v2 = a2 / e;
    let r = (y1 * y2 * n - x2 * c2).rem_euclid(v1);
    let a3 = v1 * v2;
    let b3 = b2 + 2 * v2 * r;
    let num = b3 * b3 - disc;
    debug_assert_eq!(num % (4 * a3), 0, "composition middle coefficient");
    let c3 = num / (4 * a3);
    reduce(&BinaryQuadraticForm::new(a3, b3, c3))
}

/// Both sides of the discriminant relation `disc(f∘g)` versus
/// `disc(f)·disc(g)·disc(h)²`. The right side can exceed 128 bits.
pub fn check_discriminant_relation(
    f: &BinaryQuadraticForm,
    g: &BinaryQuadraticForm,
    h: &BinaryQuadraticForm,
) -> Result<(BigInt, BigInt), AlgebraError> {
    let composed = compose_forms(f, g)?;
    let lhs = BigInt::from(composed.discriminant());
    let dh = BigInt::from(h.discriminant());
    let rhs = BigInt::from(f.discriminant()) * BigInt::from(g.discriminant()) * &dh * &dh;
    Ok((lhs, rhs))
}

/// All reduced primitive positive-definite forms of discriminant `d`, sorted.
/// Uses the bound `3a² ≤ |d|` that every reduced form satisfies.
pub fn reduced_forms(d: i128) -> Vec<BinaryQuadraticForm> {
    if d >= 0 || !matches!(d.rem_euclid(4), 0 | 1) {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut a = 1i128;
    while 3 * a * a <= -d {
        for b in -a..=a {
            let num = b * b - d;
            if num % (4 * a) != 0 {
                continue;
            }
            let form = BinaryQuadraticForm::new(a, b, num / (4 * a));
            if form.is_reduced() && form.is_primitive() {
                out.push(form);
            }
        }
        a += 1;
    }
    out.sort();
    out
}

/// Outcome of checking the class-group axioms on one discriminant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAxiomReport {
    pub discriminant: i128,
    pub class_count: usize,
    pub closure: bool,
    pub identity: bool,
    pub inverses: bool,
    pub associativity: bool,
}

impl GroupAxiomReport {
    pub fn all_hold(&self) -> bool {
        self.closure && self.identity && self.inverses && self.associativity
    }
}

/// Exhaustively checks closure, identity, inverses and associativity of
/// composition on the reduced forms of `d`.
pub fn check_group_axioms(d: i128) -> Result<GroupAxiomReport, AlgebraError> {
    let forms = reduced_forms(d);
    let n = forms.len();
    let index_of = |f: &BinaryQuadraticForm| forms.iter().position(|g| g == f);

    let mut table = vec![vec![None; n]; n];
    let mut closure = true;
    for (i, f) in forms.iter().enumerate() {
        for (j, g) in forms.iter().enumerate() {
            let h = compose_forms(f, g)?;
            table[i][j] = index_of(&h);
            closure &= table[i][j].is_some();
        }
    }

    let principal = BinaryQuadraticForm::principal(d).and_then(|p| index_of(&p));
    let identity = match principal {
        Some(e) => (0..n).all(|i| table[e][i] == Some(i) && table[i][e] == Some(i)),
        None => false,
    };
    let inverses = match principal {
        Some(e) => forms.iter().enumerate().all(|(i, f)| {
            let inv = reduce(&f.inverse()).ok().and_then(|g| index_of(&g));
            inv.is_some_and(|k| table[i][k] == Some(e) && table[k][i] == Some(e))
        }),
        None => false,
    };
    let mut associativity = closure;
    if closure {
        'outer: for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let left = table[table[i][j].unwrap()][k];
                    let right = table[i][table[j][k].unwrap()];
                    if left != right {
                        associativity = false;
                        break 'outer;
                    }
                }
            }
        }
    }

    Ok(GroupAxiomReport {
        discriminant: d,
        class_count: n,
        closure,
        identity,
        inverses,
        associativity,
    })
}

/// Draws `count` cubes with entries uniform in `[-bound, bound]` and returns
/// how many have three slice forms of equal discriminant.
pub fn equal_discriminant_trials(count: usize, bound: i64, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .filter(|_| {
            let cube = Cube::new(std::array::from_fn(|_| rng.gen_range(-bound..=bound)));
            let [q1, q2, q3] = slice_forms(&cube).map(|q| q.discriminant());
            q1 == q2 && q2 == q3
        })
        .count()
}
