//! Dynkin's explicit form of `log(exp X exp Y)`, used as an independent
//! reference for the closed-form product.

use super::{Element, StructureConstants};

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Right-nested bracket `[w1, [w2, ... [w_{N-1}, w_N]]]` of a word in `x, y`.
fn nested(sc: &StructureConstants, word: &[bool], x: &Element, y: &Element) -> Element {
    let letter = |b: bool| if b { y } else { x };
    let mut acc = letter(word[word.len() - 1]).clone();
    for &w in word[..word.len() - 1].iter().rev() {
        acc = sc.br(letter(w), &acc);
    }
    acc
}

/// Sum of all Dynkin terms of total degree `<= max_degree`.
///
/// Each term is indexed by blocks `(r_1, s_1), ..., (r_n, s_n)` with
/// `r_i + s_i >= 1`, contributing
/// `(-1)^(n-1) / n * [x^r1 y^s1 ... x^rn y^sn] / (N * prod r_i! s_i!)`.
pub fn dynkin_bch(sc: &StructureConstants, x: &Element, y: &Element, max_degree: usize) -> Element {
    let mut total = Element::zeros(sc.dim());
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    walk(sc, x, y, max_degree, &mut blocks, &mut total);
    total
}

fn walk(
    sc: &StructureConstants,
    x: &Element,
    y: &Element,
    max_degree: usize,
    blocks: &mut Vec<(usize, usize)>,
    total: &mut Element,
) {
    let used: usize = blocks.iter().map(|(r, s)| r + s).sum();
    if !blocks.is_empty() {
        let n = blocks.len();
        let mut word = Vec::with_capacity(used);
        let mut denom = used as f64;
        for &(r, s) in blocks.iter() {
            word.extend(std::iter::repeat_n(false, r));
            word.extend(std::iter::repeat_n(true, s));
            denom *= factorial(r) * factorial(s);
        }
        let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
        let coef = sign / (n as f64) / denom;
        *total += nested(sc, &word, x, y) * coef;
    }
    for deg in 1..=max_degree.saturating_sub(used) {
        for r in 0..=deg {
            blocks.push((r, deg - r));
            walk(sc, x, y, max_degree, blocks, total);
            blocks.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::NilpotentAlgebra;
    use proptest::prelude::*;

    #[test]
    fn degree_two_is_half_bracket() {
        let sc = StructureConstants::heisenberg3();
        let x = Element::from_row_slice(&[1.0, 0.0, 0.0]);
        let y = Element::from_row_slice(&[0.0, 1.0, 0.0]);
        let z = dynkin_bch(&sc, &x, &y, 2);
        assert!((z - Element::from_row_slice(&[1.0, 1.0, 0.5])).amax() < 1e-15);
    }

    #[test]
    fn abelian_reduces_to_sum() {
        let sc = StructureConstants::abelian(3).unwrap();
        let x = Element::from_row_slice(&[1.0, -2.0, 0.5]);
        let y = Element::from_row_slice(&[0.25, 3.0, -1.0]);
        assert!((dynkin_bch(&sc, &x, &y, 4) - (&x + &y)).amax() < 1e-14);
    }

    fn elem(n: usize) -> impl Strategy<Value = Element> {
        proptest::collection::vec(-2.0f64..2.0, n).prop_map(|v| Element::from_vec(v))
    }

    proptest! {
        #[test]
        fn closed_form_matches_series(x in elem(5), y in elem(5)) {
            for name in ["heisenberg3", "filiform4", "filiform5"] {
                let a = NilpotentAlgebra::preset(name).unwrap();
                let n = a.dim();
                let xs = Element::from_iterator(n, x.iter().take(n).copied());
                let ys = Element::from_iterator(n, y.iter().take(n).copied());
                let d = dynkin_bch(a.constants(), &xs, &ys, a.class());
                let c = a.bch_product(&xs, &ys).unwrap();
                prop_assert!((d - c).amax() < 1e-10);
            }
        }
    }
}
