//! Arithmetic on binary polynomials of degree at most 64.
//!
//! A tap set `{n, t1, t2, ...}` denotes x^n + x^t1 + x^t2 + ... + 1, the same
//! notation the LFSR and signature registers use.

/// Known primitive polynomials, indexed by degree (entry 0 unused).
pub const PRIMITIVE_TAPS: [&[u32]; 33] = [
    &[],
    &[1],
    &[2, 1],
    &[3, 2],
    &[4, 3],
    &[5, 3],
    &[6, 5],
    &[7, 6],
    &[8, 6, 5, 4],
    &[9, 5],
    &[10, 7],
    &[11, 9],
    &[12, 6, 4, 1],
    &[13, 4, 3, 1],
    &[14, 5, 3, 1],
    &[15, 14],
    &[16, 15, 13, 4],
    &[17, 14],
    &[18, 11],
    &[19, 6, 2, 1],
    &[20, 17],
    &[21, 19],
    &[22, 21],
    &[23, 18],
    &[24, 23, 22, 17],
    &[25, 22],
    &[26, 6, 2, 1],
    &[27, 5, 2, 1],
    &[28, 25],
    &[29, 27],
    &[30, 6, 4, 1],
    &[31, 28],
    &[32, 22, 2, 1],
];

/// Coefficients below x^degree (the constant term is always set).
pub fn low_terms(degree: u32, taps: &[u32]) -> u64 {
    taps.iter()
        .filter(|&&t| t < degree)
        .fold(1u64, |m, &t| m | 1 << t)
}

fn mask(degree: u32) -> u64 {
    if degree == 64 {
        !0
    } else {
        (1u64 << degree) - 1
    }
}

/// `r * x mod p`.
#[inline]
pub fn mul_x(r: u64, degree: u32, low: u64) -> u64 {
    let carry = (r >> (degree - 1)) & 1;
    let r = (r << 1) & mask(degree);
    if carry == 1 {
        r ^ low
    } else {
        r
    }
}

fn mul_mod(a: u64, b: u64, degree: u32, low: u64) -> u64 {
    let mut r = 0;
    for i in (0..degree).rev() {
        r = mul_x(r, degree, low);
        if (b >> i) & 1 == 1 {
            r ^= a;
        }
    }
    r
}

fn pow_x(e: u64, degree: u32, low: u64) -> u64 {
    let mut base = if degree == 1 { low & 1 } else { 2 };
    let mut acc = 1u64;
    let mut e = e;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_mod(acc, base, degree, low);
        }
        base = mul_mod(base, base, degree, low);
        e >>= 1;
    }
    acc
}

fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut p = 2u64;
    while p * p <= n {
        if n.is_multiple_of(p) {
            out.push(p);
            while n.is_multiple_of(p) {
                n /= p;
            }
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// True if the polynomial has multiplicative order 2^degree - 1, i.e. an LFSR
/// built on it runs through every nonzero state. Supports degrees 1..=32.
pub fn is_primitive(degree: u32, taps: &[u32]) -> bool {
    assert!(
        (1..=32).contains(&degree),
        "primitivity check supports degree 1..=32"
    );
    let low = low_terms(degree, taps);
    let order = (1u64 << degree) - 1;
    if pow_x(order, degree, low) != 1 {
        return false;
    }
    prime_factors(order)
        .into_iter()
        .all(|q| pow_x(order / q, degree, low) != 1)
}
