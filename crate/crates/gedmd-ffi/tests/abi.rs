//! Drives the C entry points the way a C caller would: raw pointers,
//! status codes, caller-owned buffers.

use gedmd_ffi::*;

fn generator_spec() -> GedmdOperatorSpec {
    GedmdOperatorSpec {
        kind: GedmdOperatorKind::KoopmanGenerator,
        t: 0.0,
        h: 0.0,
        n_realizations: 0,
    }
}

fn last_error_string() -> String {
    unsafe {
        let needed = gedmd_last_error(std::ptr::null_mut(), 0);
        if needed == 0 {
            return String::new();
        }
        let mut buf = vec![0i8; needed];
        gedmd_last_error(buf.as_mut_ptr(), buf.len());
        std::ffi::CStr::from_ptr(buf.as_ptr())
            .to_string_lossy()
            .into_owned()
    }
}

#[test]
fn estimate_recovers_the_generator_action() {
    unsafe {
        let sys = gedmd_system_ou();
        let dict = gedmd_dictionary_monomials(1, 3);
        assert_eq!(gedmd_system_dim(sys), 1);
        let n = gedmd_dictionary_len(dict);
        assert_eq!(n, 4);

        let mut a = vec![0.0f64; n * n];
        let mut rank = 0usize;
        let status = gedmd_estimate(
            dict,
            sys,
            &generator_spec(),
            4096,
            7,
            0.0,
            a.as_mut_ptr(),
            a.len(),
            &mut rank,
        );
        assert_eq!(status, GedmdStatus::Ok);
        assert_eq!(rank, n);
        // Column convention: column 1 is the image of x, which the drift
        // maps to -x exactly (row-major buffer: entry [1][1]).
        assert!((a[n + 1] + 1.0).abs() < 1e-10, "a[1][1] = {}", a[n + 1]);
        // Column 2 is the image of x^2 = sigma^2 - 2 x^2 with sigma^2 = 1/2.
        assert!((a[2] - 0.5).abs() < 1e-10, "a[0][2] = {}", a[2]);
        assert!((a[2 * n + 2] + 2.0).abs() < 1e-10, "a[2][2] = {}", a[2 * n + 2]);

        gedmd_dictionary_free(dict);
        gedmd_system_free(sys);
    }
}

#[test]
fn spectrum_matches_the_known_eigenvalues() {
    unsafe {
        let sys = gedmd_system_ou();
        let dict = gedmd_dictionary_monomials(1, 4);
        let n = gedmd_dictionary_len(dict);
        let (mut re, mut im, mut res) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let status = gedmd_spectrum(
            dict,
            sys,
            &generator_spec(),
            8192,
            11,
            re.as_mut_ptr(),
            im.as_mut_ptr(),
            res.as_mut_ptr(),
            n,
        );
        assert_eq!(status, GedmdStatus::Ok);
        // The projected generator on polynomials has spectrum 0, -1, ..., -k.
        for (i, (&r, &ii)) in re.iter().zip(&im).enumerate() {
            assert!((r + i as f64).abs() < 1e-6, "lambda_{i} = {r}");
            assert_eq!(ii, 0.0);
            assert!(res[i] < 1e-6);
        }
        gedmd_dictionary_free(dict);
        gedmd_system_free(sys);
    }
}

#[test]
fn certificates_round_trip_through_the_constants_struct() {
    unsafe {
        let sys = gedmd_system_ou();
        let dict = gedmd_dictionary_monomials(1, 2);
        let mut consts = GedmdConstants {
            n: 0,
            norm_g: 0.0,
            norm_g_inv: 0.0,
            norm_c: 0.0,
            norm_t: 0.0,
            gamma: 0.0,
        };
        let status = gedmd_operator_constants(
            dict,
            sys,
            &generator_spec(),
            1 << 15,
            3,
            &mut consts,
        );
        assert_eq!(status, GedmdStatus::Ok);
        assert_eq!(consts.n, 3);
        assert!(consts.norm_g > 0.0 && consts.gamma >= consts.norm_g);

        let (mut m, mut radius) = (0u64, 0.0f64);
        let status = gedmd_projection_certificate(&consts, 0.05, 0.9, &mut m, &mut radius);
        assert_eq!(status, GedmdStatus::Ok);
        assert!(m > 0 && radius > 0.0);

        // A schedule for the radius the certificate just produced demands
        // the same sample size (the two statements are equivalent).
        let (mut m2, mut delta) = (0u64, 0.0f64);
        let status = gedmd_sample_schedule(&consts, radius, 0.9, &mut m2, &mut delta);
        assert_eq!(status, GedmdStatus::Ok);
        assert_eq!(m, m2);
        assert!((delta - 0.05).abs() < 1e-12);

        // Outside the resolvent window: validity failure with a message.
        let status = gedmd_projection_certificate(&consts, 10.0, 0.9, &mut m, &mut radius);
        assert_eq!(status, GedmdStatus::Validity);
        assert!(last_error_string().contains("validity"));

        gedmd_dictionary_free(dict);
        gedmd_system_free(sys);
    }
}

#[test]
fn errors_are_reported_not_panicked() {
    unsafe {
        // Null handles.
        let mut a = [0.0f64; 4];
        let status = gedmd_estimate(
            std::ptr::null(),
            std::ptr::null(),
            &generator_spec(),
            64,
            0,
            0.0,
            a.as_mut_ptr(),
            4,
            std::ptr::null_mut(),
        );
        assert_eq!(status, GedmdStatus::NullPointer);
        assert!(!last_error_string().is_empty());

        let sys = gedmd_system_ou();
        let dict = gedmd_dictionary_monomials(1, 1);

        // Wrong buffer size.
        let status = gedmd_estimate(
            dict,
            sys,
            &generator_spec(),
            64,
            0,
            0.0,
            a.as_mut_ptr(),
            3,
            std::ptr::null_mut(),
        );
        assert_eq!(status, GedmdStatus::InvalidArgument);

        // Hats under a diffusive generator need second derivatives they do
        // not have: unsupported, with the explanation retrievable.
        let interior = [3usize];
        let hats = gedmd_dictionary_fem(sys, interior.as_ptr(), 1);
        assert!(!hats.is_null());
        let n = gedmd_dictionary_len(hats);
        let mut buf = vec![0.0f64; n * n];
        let status = gedmd_estimate(
            hats,
            sys,
            &generator_spec(),
            64,
            0,
            0.0,
            buf.as_mut_ptr(),
            n * n,
            std::ptr::null_mut(),
        );
        assert_eq!(status, GedmdStatus::Unsupported);
        assert!(last_error_string().contains("Hessian"));

        // Duplicate Gaussian centers: null handle plus a message.
        let centers = [0.5f64, 0.5];
        let bad = gedmd_dictionary_gaussians(centers.as_ptr(), 2, 1, 0.3);
        assert!(bad.is_null());
        assert!(!last_error_string().is_empty());

        gedmd_dictionary_free(hats);
        gedmd_dictionary_free(dict);
        gedmd_system_free(sys);
        // Freeing null is a no-op, as C callers expect.
        gedmd_dictionary_free(std::ptr::null_mut());
        gedmd_system_free(std::ptr::null_mut());
    }
}
