//! k-out-of-n Shamir secret sharing, byte-wise over GF(256) with the AES
//! reduction polynomial x^8 + x^4 + x^3 + x + 1.
//!
//! Each byte of the secret is the constant term of an independent random
//! polynomial of degree k-1; share `i` holds the evaluations of every
//! polynomial at x = i. One share is therefore `secret.len()` payload bytes
//! plus a single index byte shared across all positions.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One share of a split secret. `index` is the polynomial evaluation point
/// (1..=n, never 0 — x = 0 holds the secret itself).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Share {
    pub index: u8,
    pub payload: Vec<u8>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SssError {
    #[error("invalid parameters: require 1 <= k <= n <= 255, got k={k} n={n}")]
    InvalidParams { k: u8, n: u8 },
    #[error("secret must be non-empty")]
    EmptySecret,
    #[error("need {needed} shares with distinct indices, got {got}")]
    InsufficientShares { needed: u8, got: usize },
    #[error("share payload lengths differ")]
    LengthMismatch,
}

const GF_POLY: u16 = 0x11b;

// log/exp tables for the multiplicative group generated by 0x03.
const fn build_tables() -> ([u8; 256], [u8; 510]) {
    let mut log = [0u8; 256];
    let mut exp = [0u8; 510];
    let mut x: u16 = 1;
    let mut i = 0;
    while i < 255 {
        exp[i] = x as u8;
        exp[i + 255] = x as u8;
        log[x as usize] = i as u8;
        // multiply x by the generator 0x03 = x + 1
        x = (x << 1) ^ x;
        if x & 0x100 != 0 {
            x ^= GF_POLY;
        }
        i += 1;
    }
    (log, exp)
}

const TABLES: ([u8; 256], [u8; 510]) = build_tables();
const LOG: [u8; 256] = TABLES.0;
const EXP: [u8; 510] = TABLES.1;

#[inline]
fn gf_mul(a: u8, b: u8) -> u8 {
    if a == 0 || b == 0 {
        0
    } else {
        EXP[LOG[a as usize] as usize + LOG[b as usize] as usize]
    }
}

#[inline]
fn gf_inv(a: u8) -> u8 {
    debug_assert!(a != 0, "zero has no inverse in GF(256)");
    EXP[255 - LOG[a as usize] as usize]
}

#[inline]
fn gf_div(a: u8, b: u8) -> u8 {
    gf_mul(a, gf_inv(b))
}

/// Evaluate a polynomial (coefficients low-to-high) at `x` by Horner's rule.
fn poly_eval(coeffs: &[u8], x: u8) -> u8 {
    let mut acc = 0u8;
    for &c in coeffs.iter().rev() {
        acc = gf_mul(acc, x) ^ c;
    }
    acc
}

/// Split `secret` into `n` shares, any `k` of which reconstruct it.
pub fn split<R: RngCore>(secret: &[u8], k: u8, n: u8, rng: &mut R) -> Result<Vec<Share>, SssError> {
    if k < 1 || k > n {
        return Err(SssError::InvalidParams { k, n });
    }
    if secret.is_empty() {
        return Err(SssError::EmptySecret);
    }

    let mut shares: Vec<Share> = (1..=n)
        .map(|index| Share { index, payload: Vec::with_capacity(secret.len()) })
        .collect();

    let mut coeffs = vec![0u8; k as usize];
    for &byte in secret {
        coeffs[0] = byte;
        rng.fill_bytes(&mut coeffs[1..]);
        for share in &mut shares {
            share.payload.push(poly_eval(&coeffs, share.index));
        }
    }
    Ok(shares)
}

/// Lagrange-interpolate the shares at x = 0, byte-wise. Uses the first `k`
/// distinct indices; the caller is responsible for verifying the result (the
/// scheme itself cannot tell a wrong mix of shares from the right one).
pub fn reconstruct(shares: &[Share], k: u8) -> Result<Vec<u8>, SssError> {
    let mut selected: Vec<&Share> = Vec::with_capacity(k as usize);
    for share in shares {
        if share.index != 0 && !selected.iter().any(|s| s.index == share.index) {
            selected.push(share);
            if selected.len() == k as usize {
                break;
            }
        }
    }
    if selected.len() < k as usize {
        return Err(SssError::InsufficientShares { needed: k, got: selected.len() });
    }
    let len = selected[0].payload.len();
    if selected.iter().any(|s| s.payload.len() != len) {
        return Err(SssError::LengthMismatch);
    }

    // Basis coefficients at x = 0: l_i = prod_{j != i} x_j / (x_j - x_i).
    // Subtraction is XOR in GF(256), so x_j - x_i = x_j ^ x_i.
    let mut basis = Vec::with_capacity(selected.len());
    for (i, si) in selected.iter().enumerate() {
        let mut num = 1u8;
        let mut den = 1u8;
        for (j, sj) in selected.iter().enumerate() {
            if i != j {
                num = gf_mul(num, sj.index);
                den = gf_mul(den, sj.index ^ si.index);
            }
        }
        basis.push(gf_div(num, den));
    }

    let mut secret = vec![0u8; len];
    for (share, &l) in selected.iter().zip(&basis) {
        for (out, &y) in secret.iter_mut().zip(&share.payload) {
            *out ^= gf_mul(l, y);
        }
    }
    Ok(secret)
}
