mod oracles;

use oracles::attention::{attention_case_error, AttentionCase};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn block_matches_dense_softmax_formula(
        seed in any::<u64>(),
        heads in 1usize..=4,
        d_head in 1usize..=4,
        m in 1usize..=8,
        n in 1usize..=8,
        cross in any::<bool>(),
        pre_norm in any::<bool>(),
        residual in any::<bool>(),
        mask_bits in any::<u8>(),
    ) {
        let case = AttentionCase { seed, heads, d_head, m, n, cross, pre_norm, residual, mask_bits };
        let err = attention_case_error(&case);
        prop_assert!(err <= 1e-10, "{case:?}: {err}");
    }
}
