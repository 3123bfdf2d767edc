use hecovert_core::control_sim::LtiModel;
use hecovert_core::covert_attack::{controllability_matrix, cooldown_inputs, delta_step};
use hecovert_core::enc_linalg::{decrypt_matrix, enc_matmat, enc_matvec, encrypt_matrix};
use hecovert_core::linalg::rank;
use hecovert_core::packed_he::{tile, BackendConfig, KeyContext, PackedCiphertext};
use hecovert_core::verify::{DecodeOutcome, Threshold, VerifierContext, VerifierParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const SLOTS: usize = 32;

fn key(depth: usize) -> KeyContext<f64> {
    KeyContext::new(BackendConfig::exact(SLOTS, depth, 7)).unwrap()
}

fn slots() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0..100.0f64, SLOTS)
}

fn square(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-5.0..5.0f64, d * d).prop_map(move |v| DMatrix::from_row_slice(d, d, &v))
}

fn dim() -> impl Strategy<Value = usize> {
    prop::sample::select(vec![2usize, 4, 8, 16])
}

proptest! {
    #[test]
    fn slotwise_homomorphism(a in slots(), b in slots(), r in -40isize..40) {
        let k = key(2);
        let (ca, cb) = (k.encrypt(&a).unwrap(), k.encrypt(&b).unwrap());
        let sum = k.decrypt(&k.add(&ca, &cb).unwrap()).unwrap();
        let prod = k.decrypt(&k.mul(&ca, &cb).unwrap()).unwrap();
        let rot = k.decrypt(&k.rotate(&ca, r).unwrap()).unwrap();
        for j in 0..SLOTS {
            prop_assert_eq!(sum[j], a[j] + b[j]);
            prop_assert_eq!(prod[j], a[j] * b[j]);
            prop_assert_eq!(rot[j], a[(j as isize + r).rem_euclid(SLOTS as isize) as usize]);
        }
    }

    #[test]
    fn serialization_round_trips(a in slots()) {
        let k = key(1);
        let c = k.mul_plain(&k.encrypt(&a).unwrap(), &a).unwrap();
        let bytes = c.to_bytes();
        prop_assert_eq!(bytes.len(), PackedCiphertext::<f64>::encoded_len(SLOTS));
        prop_assert_eq!(PackedCiphertext::<f64>::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn diagonal_matvec_and_matmat_match_plaintext((d, s, t, v) in dim().prop_flat_map(|d| (
        Just(d), square(d), square(d), prop::collection::vec(-5.0..5.0f64, d)
    ))) {
        let k = key(3);
        let pk = k.public();
        let (es, et) = (encrypt_matrix(&pk, &s, None).unwrap(), encrypt_matrix(&pk, &t, None).unwrap());
        let ev = pk.encrypt(&tile(&v, d, SLOTS)).unwrap();
        let got = k.decrypt_vector(&enc_matvec(&pk, &es, &ev).unwrap(), d).unwrap();
        let want = &s * DVector::from_column_slice(&v);
        for i in 0..d {
            prop_assert!((got[i] - want[i]).abs() <= 1e-9);
        }
        let prod = decrypt_matrix(&k, &enc_matmat(&pk, &es, &et).unwrap()).unwrap();
        prop_assert!((prod - &s * &t).amax() <= 1e-9);
    }

    #[test]
    fn banded_matvec_matches_dense((d, beta, s, v) in prop::sample::select(vec![4usize, 8, 16])
        .prop_flat_map(|d| (Just(d), 0..d / 2))
        .prop_flat_map(|(d, beta)| (Just(d), Just(beta), square(d), prop::collection::vec(-5.0..5.0f64, d))))
    {
        let mut s = s;
        for r in 0..d {
            for c in 0..d {
                let off = (c as isize - r as isize).rem_euclid(d as isize) as usize;
                if off.min(d - off) > beta {
                    s[(r, c)] = 0.0;
                }
            }
        }
        let k = key(1);
        let pk = k.public();
        let ev = pk.encrypt(&tile(&v, d, SLOTS)).unwrap();
        let dense = encrypt_matrix(&pk, &s, None).unwrap();
        let banded = encrypt_matrix(&pk, &s, Some(beta)).unwrap();
        let before = pk.op_counts();
        let b = k.decrypt_vector(&enc_matvec(&pk, &banded, &ev).unwrap(), d).unwrap();
        prop_assert_eq!((pk.op_counts() - before).mul, 2 * beta as u64 + 1);
        let a = k.decrypt_vector(&enc_matvec(&pk, &dense, &ev).unwrap(), d).unwrap();
        for i in 0..d {
            prop_assert!((a[i] - b[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn cooldown_zeroes_random_controllable_systems(
        n in 1usize..=4,
        m in 1usize..=2,
        entries in prop::collection::vec(-1.0..1.0f64, 4 * 4 + 4 * 2 + 4 * 4),
        schedule in prop::collection::vec(-2.0..2.0f64, 2 * 6),
    ) {
        let a = DMatrix::from_row_slice(n, n, &entries[..n * n]);
        let b = DMatrix::from_row_slice(n, m, &entries[16..16 + n * m]);
        let c = DMatrix::from_row_slice(n, n, &entries[24..24 + n * n]);
        let model = LtiModel::new(a, b, c).unwrap();
        let cc = controllability_matrix(&model);
        prop_assume!(rank(&cc) == n);
        let sv = cc.clone().svd(false, false).singular_values;
        prop_assume!(sv.min() > 1e-3 * sv.max());
        let mut dx = DVector::zeros(n);
        for k in 0..6 {
            let a_u = DVector::from_column_slice(&schedule[k * m..(k + 1) * m]);
            dx = delta_step(&model, &dx, &a_u).unwrap().0;
        }
        let scale = dx.amax().max(1.0);
        for u in cooldown_inputs(&model, &dx).unwrap() {
            dx = delta_step(&model, &dx, &u).unwrap().0;
        }
        prop_assert!(dx.amax() <= 1e-8 * scale, "{}", dx.amax());
        for _ in 0..5 {
            let (next, a_y) = delta_step(&model, &dx, &DVector::zeros(m)).unwrap();
            prop_assert!(a_y.amax() <= 1e-8 * scale);
            dx = next;
        }
    }

    #[test]
    fn verifier_accepts_honest_evaluations(
        lambda in prop::sample::select(vec![2usize, 4, 8]),
        w in prop::collection::vec(-10.0..10.0f64, 4),
        seed in any::<u64>(),
    ) {
        let h = |x: &[f64]| -> Vec<f64> { vec![2.0 * x[0] - x[3], x[1] + x[2], -x[2], 0.5 * x[0] + x[1]] };
        let params = VerifierParams::new(lambda, 8, Threshold::Fixed(1e-9), seed);
        let mut v = VerifierContext::setup(64, 4, h, &params).unwrap();
        let (enc, tag) = v.ecd(&w).unwrap();
        let z: Vec<f64> = enc.chunks(4).flat_map(h).collect();
        match v.dcd(&tag, &z).unwrap() {
            DecodeOutcome::Payload(p) => prop_assert_eq!(p, h(&w)),
            DecodeOutcome::Bottom { .. } => prop_assert!(false, "honest evaluation rejected"),
        }
    }
}
