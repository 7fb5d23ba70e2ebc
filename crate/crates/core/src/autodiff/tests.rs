use super::*;
use crate::testutil::Fixture;

fn assert_close(a: &GridFunction, b: &GridFunction, tol: f64) {
    let d = a.max_abs_diff(b);
    assert!(d < tol, "max abs diff {d} exceeds {tol}");
}

#[test]
fn add_zero_is_identity() {
    let mut fx = Fixture::new(1);
    let mut tape = Tape::new();
    let x = tape.constant(fx.real(&[2, 3]));
    let z = tape.constant(GridFunction::zeros(&[2, 3]));
    let y = tape.add(x, z).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
}

#[test]
fn identity_kernel_per_mode_leaves_input() {
    let mut fx = Fixture::new(2);
    let xval = fx.complex(&[2, 3, 4, 2]);
    let mut eye = vec![C64::new(0.0, 0.0); 4 * 2 * 9];
    for m in 0..8 {
        for i in 0..3 {
            eye[m * 9 + i * 3 + i] = C64::new(1.0, 0.0);
        }
    }
    let k = GridFunction::complex(&[4, 2, 3, 3], eye).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(xval.clone());
    let k = tape.constant(k);
    let y = tape.mode_matvec(x, k).unwrap();
    assert_eq!(tape.value(y).cx(), xval.cx());
}

#[test]
fn shape_mismatch_rejected() {
    let mut tape = Tape::new();
    let a = tape.constant(GridFunction::zeros(&[2, 3]));
    let b = tape.constant(GridFunction::zeros(&[3, 2]));
    assert!(matches!(tape.add(a, b), Err(Error::Shape(_))));
    let w = tape.constant(GridFunction::zeros(&[4, 5]));
    assert!(tape.channel_linear(a, w, None).is_err());
}

#[test]
fn composite_matches_direct_evaluation() {
    // y = sum(tanh(W x + b) * x2) with x: (1, 2, 3)
    let mut fx = Fixture::new(3);
    let x = fx.real(&[1, 2, 3]);
    let w = fx.real(&[2, 2]);
    let b = fx.real(&[2]);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.constant(w.clone());
    let bv = tape.constant(b.clone());
    let h = tape.channel_linear(xv, wv, Some(bv)).unwrap();
    let t = tape.tanh(h).unwrap();
    let m = tape.mul(t, xv).unwrap();
    let s = tape.sum(m).unwrap();

    let mut direct = 0.0;
    for o in 0..2 {
        for p in 0..3 {
            let pre = b.re()[o] + (0..2).map(|i| w.re()[o * 2 + i] * x.re()[i * 3 + p]).sum::<f64>();
            direct += pre.tanh() * x.re()[o * 3 + p];
        }
    }
    assert_eq!(tape.value(s).re()[0], direct);
}

#[test]
fn squared_norm_gradient_is_twice_input() {
    let mut fx = Fixture::new(4);
    let mut params = vec![Param::new("x", fx.real(&[5]))];
    let mut tape = Tape::new();
    let x = tape.param(0, &params[0]);
    let l = tape.sum_squares(x);
    tape.backward(l).unwrap().accumulate_into(&mut params).unwrap();
    for (g, v) in params[0].grad.re().iter().zip(params[0].value.re()) {
        assert_eq!(*g, 2.0 * v);
    }
}

#[test]
fn complex_modulus_gradient_is_w() {
    let w = C64::new(0.7, -1.3);
    let mut params = vec![Param::new("w", GridFunction::complex(&[1], vec![w]).unwrap())];
    let mut tape = Tape::new();
    let v = tape.param(0, &params[0]);
    let l = tape.sum_squares(v);
    tape.backward(l).unwrap().accumulate_into(&mut params).unwrap();
    assert_eq!(params[0].grad.cx()[0], w);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.constant(GridFunction::zeros(&[3]));
    assert!(matches!(tape.backward(x), Err(Error::Shape(_))));
}

fn three_layer(tape: &mut Tape, v: &[Var], x: Var) -> Result<Var> {
    let h1 = tape.channel_linear(x, v[0], Some(v[1]))?;
    let a1 = tape.tanh(h1)?;
    let h2 = tape.channel_linear(a1, v[2], Some(v[3]))?;
    let a2 = tape.tanh(h2)?;
    let h3 = tape.channel_linear(a2, v[4], None)?;
    Ok(tape.sum_squares(h3))
}

#[test]
fn three_layer_composite_matches_finite_differences() {
    let mut fx = Fixture::new(5);
    let x = fx.real(&[2, 3, 4]);
    let params = vec![
        Param::new("w1", fx.real(&[4, 3])),
        Param::new("b1", fx.real(&[4])),
        Param::new("w2", fx.real(&[4, 4])),
        Param::new("b2", fx.real(&[4])),
        Param::new("w3", fx.real(&[2, 4])),
    ];
    let check = grad_check(&params, 1e-6, |tape, v| {
        let x = tape.constant(x.clone());
        three_layer(tape, v, x)
    })
    .unwrap();
    assert!(check.max_elementwise < 1e-5, "{check:?}");
}

#[test]
fn linear_function_checks_at_machine_precision() {
    let mut fx = Fixture::new(6);
    let c = fx.real(&[1, 2, 3]);
    let params = vec![Param::new("x", fx.real(&[1, 2, 3]))];
    for h in [1e-2, 1e-4, 1e-6] {
        let check = grad_check(&params, h, |tape, v| {
            let c = tape.constant(c.clone());
            let m = tape.mul(v[0], c)?;
            tape.sum(m)
        })
        .unwrap();
        assert!(check.max_rel < 1e-8, "h = {h}: {check:?}");
    }
}

#[test]
fn tanh_affine_check() {
    let mut fx = Fixture::new(7);
    let x = fx.real(&[1, 3, 5]);
    let params = vec![Param::new("w", fx.real(&[4, 3])), Param::new("b", fx.real(&[4]))];
    let check = grad_check(&params, 1e-6, |tape, v| {
        let x = tape.constant(x.clone());
        let h = tape.channel_linear(x, v[0], Some(v[1]))?;
        let t = tape.tanh(h)?;
        tape.sum(t)
    })
    .unwrap();
    assert!(check.max_rel < 1e-6, "{check:?}");
}

#[test]
fn fourier_ops_adjoints_match_finite_differences() {
    let mut fx = Fixture::new(8);
    let target = fx.complex(&[1, 2, 6, 4]);
    let params = vec![
        Param::new("x", fx.real(&[1, 2, 6, 4])),
        Param::new("k", fx.complex(&[4, 2, 2, 2])),
    ];
    let check = grad_check(&params, 1e-6, |tape, v| {
        let xc = tape.to_complex(v[0]);
        let f = tape.dft(xc, &[2, 3])?;
        let t = tape.truncate_modes(f, &[2, 3], &[2, 1])?;
        let y = tape.mode_matvec(t, v[1])?;
        let p = tape.pad_modes(y, &[2, 3], &[6, 4])?;
        let back = tape.idft(p, &[2, 3])?;
        let tc = tape.constant(target.clone());
        let prod = tape.mul(back, tc)?;
        let r = tape.real_part(prod);
        let t = tape.tanh(r)?;
        Ok(tape.sum_squares(t))
    })
    .unwrap();
    assert!(check.max_rel < 1e-6, "{check:?}");
}

#[test]
fn fused_spectral_conv_equals_primitive_chain() {
    let mut fx = Fixture::new(9);
    let x = fx.real(&[2, 3, 6, 8]);
    let k = fx.complex(&[4, 4, 2, 3]);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let kv = tape.constant(k);
    let fused = tape.spectral_conv(xv, kv).unwrap();
    let xc = tape.to_complex(xv);
    let f = tape.dft(xc, &[2, 3]).unwrap();
    let t = tape.truncate_modes(f, &[2, 3], &[2, 2]).unwrap();
    let y = tape.mode_matvec(t, kv).unwrap();
    let p = tape.pad_modes(y, &[2, 3], &[6, 8]).unwrap();
    let back = tape.idft(p, &[2, 3]).unwrap();
    let chain = tape.real_part(back);
    assert_close(tape.value(fused), tape.value(chain), 1e-12);
}

#[test]
fn fused_spectral_conv_gradients() {
    let mut fx = Fixture::new(10);
    let w = fx.real(&[2, 2, 5, 6]);
    let params = vec![
        Param::new("x", fx.real(&[2, 2, 5, 6])),
        Param::new("k", fx.complex(&[4, 4, 2, 2])),
    ];
    let check = grad_check(&params, 1e-6, |tape, v| {
        let y = tape.spectral_conv(v[0], v[1])?;
        let wv = tape.constant(w.clone());
        let m = tape.mul(y, wv)?;
        let t = tape.tanh(m)?;
        tape.sum(t)
    })
    .unwrap();
    assert!(check.max_rel < 1e-6, "{check:?}");
}

#[test]
fn derivative_and_mask_gradients() {
    let mut fx = Fixture::new(11);
    let field = |g: GridFunction| -> GridFunction {
        let s = g.shape().to_vec();
        GridFunction::field(s[0], s[1], s[2], &s[3..], 1.0, g.into_real()).unwrap()
    };
    let xi = field(fx.real(&[2, 2, 3, 8]));
    let params = vec![
        Param::new("x", field(fx.real(&[2, 2, 3, 8]))),
        Param::new("g", field(fx.real(&[2, 4, 3, 8]))),
    ];
    let check = grad_check(&params, 1e-6, |tape, v| {
        let d = tape.spectral_derivative(v[0], 3)?;
        let c = tape.concat_channels(&[v[0], d])?;
        let t = tape.tanh(c)?;
        let xiv = tape.constant(xi.clone());
        let gx = tape.field_matvec(v[1], xiv)?;
        let m = tape.mask_time0(gx)?;
        let s1 = tape.sum_squares(t);
        let s2 = tape.sum_squares(m);
        tape.add(s1, s2)
    })
    .unwrap();
    assert!(check.max_rel < 1e-6, "{check:?}");
}

#[test]
fn shared_parameter_accumulates_contributions() {
    let mut fx = Fixture::new(12);
    let x = fx.real(&[1, 2, 3]);
    let mut params = vec![Param::new("w", fx.real(&[2, 2]))];
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let w1 = tape.param(0, &params[0]);
    let w2 = tape.param(0, &params[0]);
    let h1 = tape.channel_linear(xv, w1, None).unwrap();
    let h2 = tape.channel_linear(xv, w2, None).unwrap();
    let s = tape.add(h1, h2).unwrap();
    let l = tape.sum(s).unwrap();
    tape.backward(l).unwrap().accumulate_into(&mut params).unwrap();
    // d/dw[o,i] of sum over two uses = 2 * sum_p x[i,p]
    for o in 0..2 {
        for i in 0..2 {
            let expect = 2.0 * x.re()[i * 3..(i + 1) * 3].iter().sum::<f64>();
            assert!((params[0].grad.re()[o * 2 + i] - expect).abs() < 1e-14);
        }
    }
    let once = params[0].grad.clone();
    tape.backward(l).unwrap().accumulate_into(&mut params).unwrap();
    for (a, b) in params[0].grad.re().iter().zip(once.re()) {
        assert_eq!(*a, 2.0 * b);
    }
    params[0].zero_grad();
    assert!(params[0].grad.re().iter().all(|g| *g == 0.0));
}

#[test]
fn backward_is_deterministic() {
    let mut fx = Fixture::new(13);
    let params = [Param::new("x", fx.real(&[1, 2, 4, 6])), Param::new("k", fx.complex(&[2, 4, 2, 2]))];
    let mut tape = Tape::new();
    let x = tape.param(0, &params[0]);
    let k = tape.param(1, &params[1]);
    let y = tape.spectral_conv(x, k).unwrap();
    let t = tape.tanh(y).unwrap();
    let l = tape.sum_squares(t);
    let g1 = tape.backward(l).unwrap();
    let g2 = tape.backward(l).unwrap();
    assert_eq!(g1.get(k).unwrap(), g2.get(k).unwrap());
    assert_eq!(g1.get(x).unwrap(), g2.get(x).unwrap());
}
