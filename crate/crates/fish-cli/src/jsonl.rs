//! The per-step JSONL wire format: one object per emitted step, reals
//! printed with exactly six decimals so identical runs produce identical
//! bytes.

use fish_core::decoder::StepOutput;

pub fn line(out: &StepOutput) -> String {
    format!(
        "{{\"t\":{},\"p\":{:.6},\"s\":{:.6},\"mag\":{:.6},\"x_km\":{:.6},\"y_km\":{:.6}}}",
        out.sample_index, out.p_rel, out.s_rel, out.magnitude, out.x_km, out.y_km
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_is_stable() {
        let out = StepOutput {
            sample_index: 3999,
            p_rel: 0.5,
            s_rel: 1.0,
            magnitude: -3.25,
            x_km: 12.3456789,
            y_km: 0.0,
        };
        assert_eq!(
            line(&out),
            "{\"t\":3999,\"p\":0.500000,\"s\":1.000000,\"mag\":-3.250000,\"x_km\":12.345679,\"y_km\":0.000000}"
        );
    }
}
