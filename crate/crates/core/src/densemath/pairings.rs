/// A perfect matching of the indices `0..2m`, stored as `m` pairs `(p, q)`
/// with `p < q`, sorted by first element.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pairing {
    pub pairs: Vec<(usize, usize)>,
}

/// `(2m - 1)!!`, the number of perfect matchings of `2m` items (1 for m = 0).
pub fn double_factorial_odd(m: usize) -> u64 {
    (1..=m as u64).map(|k| 2 * k - 1).product()
}

/// All perfect matchings of `0..2m`.
pub fn pairings(m: usize) -> Vec<Pairing> {
    let items: Vec<usize> = (0..2 * m).collect();
    let mut out = Vec::with_capacity(double_factorial_odd(m) as usize);
    let mut current = Vec::with_capacity(m);
    extend(&items, &mut current, &mut out);
    out
}

fn extend(rest: &[usize], current: &mut Vec<(usize, usize)>, out: &mut Vec<Pairing>) {
    let Some((&first, tail)) = rest.split_first() else {
        out.push(Pairing {
            pairs: current.clone(),
        });
        return;
    };
    for (k, &partner) in tail.iter().enumerate() {
        current.push((first, partner));
        let remaining: Vec<usize> = tail
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .map(|(_, &x)| x)
            .collect();
        extend(&remaining, current, out);
        current.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    /// Brute force: every set partition of 0..2m into blocks, kept when all
    /// blocks have size two.
    fn brute_force(m: usize) -> HashSet<Vec<(usize, usize)>> {
        let n = 2 * m;
        let mut found = HashSet::new();
        // restricted growth strings enumerate set partitions
        let mut labels = vec![0usize; n];
        loop {
            let blocks = labels.iter().max().map_or(0, |&b| b + 1);
            let mut members = vec![Vec::new(); blocks];
            for (i, &b) in labels.iter().enumerate() {
                members[b].push(i);
            }
            if n == 0 || members.iter().all(|b| b.len() == 2) {
                let mut p: Vec<(usize, usize)> = members.iter().map(|b| (b[0], b[1])).collect();
                p.sort();
                found.insert(p);
            }
            // next restricted growth string
            let mut i = n;
            loop {
                if i == 0 {
                    return found;
                }
                i -= 1;
                let max_prev = labels[..i].iter().max().map_or(0, |&b| b + 1);
                if i > 0 && labels[i] < max_prev {
                    labels[i] += 1;
                    for l in labels.iter_mut().skip(i + 1) {
                        *l = 0;
                    }
                    break;
                }
            }
        }
    }

    #[test]
    fn small_cases() {
        assert_eq!(pairings(0), vec![Pairing { pairs: vec![] }]);
        assert_eq!(pairings(1), vec![Pairing { pairs: vec![(0, 1)] }]);
        assert_eq!(pairings(2).len(), 3);
    }

    #[test]
    fn counts_are_odd_double_factorials() {
        for m in 0..=5 {
            assert_eq!(pairings(m).len() as u64, double_factorial_odd(m));
        }
        assert_eq!(double_factorial_odd(5), 945);
    }

    #[test]
    fn matches_brute_force_enumeration() {
        for m in 0..=4 {
            let ours: HashSet<Vec<(usize, usize)>> =
                pairings(m).into_iter().map(|p| p.pairs).collect();
            assert_eq!(ours.len() as u64, double_factorial_odd(m));
            assert_eq!(ours, brute_force(m));
        }
    }

    #[test]
    fn every_index_used_once() {
        for p in pairings(3) {
            let mut seen: Vec<usize> = p.pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
            seen.sort();
            assert_eq!(seen, (0..6).collect::<Vec<_>>());
            assert!(p.pairs.iter().all(|&(a, b)| a < b));
        }
    }
}
