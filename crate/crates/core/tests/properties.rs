use proptest::prelude::*;
use rand::SeedableRng;
use smc_core::sharing::{local_add, reconstruct, share_secret};
use smc_core::{FieldElement, PrimeModulus, SeededRng, ThresholdConfig};

fn field() -> PrimeModulus {
    PrimeModulus::default()
}

fn element() -> impl Strategy<Value = FieldElement> {
    (0..field().value()).prop_map(|v| field().element(v))
}

proptest! {
    #[test]
    fn field_axioms(a in element(), b in element(), c in element()) {
        let f = field();
        prop_assert_eq!(a + b, b + a);
        prop_assert_eq!(a * b, b * a);
        prop_assert_eq!((a + b) + c, a + (b + c));
        prop_assert_eq!((a * b) * c, a * (b * c));
        prop_assert_eq!(a * (b + c), a * b + a * c);
        prop_assert_eq!(a + f.zero(), a);
        prop_assert_eq!(a * f.one(), a);
        prop_assert_eq!(a + (-a), f.zero());
        prop_assert_eq!(a - b + b, a);
        if !a.is_zero() {
            prop_assert_eq!(a * a.inverse().unwrap(), f.one());
        }
    }

    #[test]
    fn multiplication_matches_wide_integers(a in 0..field().value(), b in 0..field().value()) {
        let f = field();
        prop_assert_eq!((f.element(a) * f.element(b)).value(), a * b % f.value());
    }

    #[test]
    fn bytes_roundtrip(a in element()) {
        prop_assert_eq!(field().decode(&a.to_bytes()).unwrap(), a);
    }

    #[test]
    fn any_t_plus_one_shares_reconstruct(
        n in 3usize..=9,
        secret in element(),
        seed in any::<u64>(),
        skip in 0usize..9,
    ) {
        let cfg = ThresholdConfig::with_default_threshold(n).unwrap();
        let t = cfg.threshold();
        let mut rng = SeededRng::seed_from_u64(seed);
        let shares = share_secret(secret, &cfg, &mut rng);
        let start = skip % (n - t);
        prop_assert_eq!(reconstruct(&shares[start..start + t + 1], &cfg).unwrap(), secret);
        prop_assert!(reconstruct(&shares[..t], &cfg).is_err());
    }

    #[test]
    fn sharing_is_additively_homomorphic(n in 3usize..=9, a in element(), b in element(), seed in any::<u64>()) {
        let cfg = ThresholdConfig::with_default_threshold(n).unwrap();
        let mut rng = SeededRng::seed_from_u64(seed);
        let (sa, sb) = (share_secret(a, &cfg, &mut rng), share_secret(b, &cfg, &mut rng));
        let sum: Vec<_> = sa.iter().zip(&sb).map(|(x, y)| local_add(x, y).unwrap()).collect();
        prop_assert_eq!(reconstruct(&sum, &cfg).unwrap(), a + b);
    }
}
