//! Compact letter display by insert-and-absorb.

/// Letters for `n` models given the rejected pairs (indices). Models share a
/// letter exactly when their pair is not rejected. Each model's letters are
/// sorted; letters are handed out in order of first use over the models.
pub fn compact_letter_display(n: usize, rejected: &[(usize, usize)]) -> Vec<String> {
    if n == 0 {
        return Vec::new();
    }
    let mut columns: Vec<Vec<bool>> = vec![vec![true; n]];
    for &(i, j) in rejected {
        if i == j || i >= n || j >= n {
            continue;
        }
        let mut next = Vec::with_capacity(columns.len() + 1);
        for col in columns {
            if col[i] && col[j] {
                let mut without_i = col.clone();
                without_i[i] = false;
                let mut without_j = col;
                without_j[j] = false;
                next.push(without_i);
                next.push(without_j);
            } else {
                next.push(col);
            }
        }
        columns = absorb(next);
    }

    // order columns by their members, so the first model's column comes first
    columns.sort_by(|a, b| b.cmp(a));
    let letters: Vec<String> = (0..columns.len()).map(letter).collect();
    (0..n)
        .map(|m| {
            columns
                .iter()
                .zip(&letters)
                .filter(|(c, _)| c[m])
                .map(|(_, l)| l.as_str())
                .collect()
        })
        .collect()
}

fn absorb(columns: Vec<Vec<bool>>) -> Vec<Vec<bool>> {
    let subset = |a: &[bool], b: &[bool]| a.iter().zip(b).all(|(x, y)| !x || *y);
    let mut kept: Vec<Vec<bool>> = Vec::new();
    for (i, c) in columns.iter().enumerate() {
        let redundant = columns
            .iter()
            .enumerate()
            .any(|(j, d)| j != i && subset(c, d) && (c != d || j < i));
        if !redundant && c.iter().any(|&x| x) {
            kept.push(c.clone());
        }
    }
    kept
}

/// a..z, then aa, ab, ...
fn letter(i: usize) -> String {
    let mut i = i;
    let mut s = Vec::new();
    loop {
        s.push(b'a' + (i % 26) as u8);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    s.reverse();
    String::from_utf8(s).expect("ascii")
}
