//! Linear-time suffix array construction by induced sorting (SA-IS).

const NONE: u32 = u32::MAX;

/// Suffix array of a byte string.
pub fn suffix_array(text: &[u8]) -> Vec<u32> {
    assert!(
        text.len() < NONE as usize,
        "suffix_array supports inputs shorter than 4 GiB"
    );
    let symbols: Vec<u32> = text.iter().map(|&b| u32::from(b)).collect();
    sa_is(&symbols, 255)
}

/// `s` holds symbols in `0..=upper`.
fn sa_is(s: &[u32], upper: u32) -> Vec<u32> {
    let n = s.len();
    match n {
        0 => return Vec::new(),
        1 => return vec![0],
        2 => return if s[0] < s[1] { vec![0, 1] } else { vec![1, 0] },
        _ => {}
    }
    let upper = upper as usize;

    // ls[i]: suffix i is S-type (smaller than suffix i + 1).
    let mut ls = vec![false; n];
    for i in (0..n - 1).rev() {
        ls[i] = if s[i] == s[i + 1] { ls[i + 1] } else { s[i] < s[i + 1] };
    }

    // Bucket starts for S-type (sum_s) and L-type (sum_l) suffixes.
    let mut sum_l = vec![0u32; upper + 2];
    let mut sum_s = vec![0u32; upper + 2];
    for i in 0..n {
        if ls[i] {
            sum_l[s[i] as usize + 1] += 1;
        } else {
            sum_s[s[i] as usize] += 1;
        }
    }
    for i in 0..=upper {
        sum_s[i] += sum_l[i];
        sum_l[i + 1] += sum_s[i];
    }

    let induce = |lms: &[u32], sa: &mut [u32]| {
        sa.fill(NONE);
        let mut buf = sum_s.clone();
        for &d in lms {
            let d = d as usize;
            if d == n {
                continue;
            }
            let c = s[d] as usize;
            sa[buf[c] as usize] = d as u32;
            buf[c] += 1;
        }
        let mut buf = sum_l.clone();
        let last = s[n - 1] as usize;
        sa[buf[last] as usize] = (n - 1) as u32;
        buf[last] += 1;
        for i in 0..n {
            let v = sa[i];
            if v != NONE && v >= 1 && !ls[v as usize - 1] {
                let c = s[v as usize - 1] as usize;
                sa[buf[c] as usize] = v - 1;
                buf[c] += 1;
            }
        }
        let mut buf = sum_l.clone();
        for i in (0..n).rev() {
            let v = sa[i];
            if v != NONE && v >= 1 && ls[v as usize - 1] {
                let c = s[v as usize - 1] as usize + 1;
                buf[c] -= 1;
                sa[buf[c] as usize] = v - 1;
            }
        }
    };

    // Left-most S-type positions.
    let mut lms_map = vec![NONE; n + 1];
    let mut lms = Vec::new();
    for i in 1..n {
        if !ls[i - 1] && ls[i] {
            lms_map[i] = lms.len() as u32;
            lms.push(i as u32);
        }
    }
    let m = lms.len();

    let mut sa = vec![NONE; n];
    induce(&lms, &mut sa);

    if m > 0 {
        let mut sorted_lms: Vec<u32> = sa
            .iter()
            .copied()
            .filter(|&v| lms_map[v as usize] != NONE)
            .collect();
        let mut rec_s = vec![0u32; m];
        let mut rec_upper = 0u32;
        rec_s[lms_map[sorted_lms[0] as usize] as usize] = 0;
        for i in 1..m {
            let mut l = sorted_lms[i - 1] as usize;
            let mut r = sorted_lms[i] as usize;
            let end_l = lms.get(lms_map[l] as usize + 1).map_or(n, |&e| e as usize);
            let end_r = lms.get(lms_map[r] as usize + 1).map_or(n, |&e| e as usize);
            let mut same = true;
            if end_l - l != end_r - r {
                same = false;
            } else {
                while l < end_l {
                    if s[l] != s[r] {
                        break;
                    }
                    l += 1;
                    r += 1;
                }
                if l == n || s[l] != s[r] {
                    same = false;
                }
            }
            if !same {
                rec_upper += 1;
            }
            rec_s[lms_map[sorted_lms[i] as usize] as usize] = rec_upper;
        }
        let rec_sa = sa_is(&rec_s, rec_upper);
        for (slot, &r) in sorted_lms.iter_mut().zip(&rec_sa) {
            *slot = lms[r as usize];
        }
        induce(&sorted_lms, &mut sa);
    }
    sa
}
