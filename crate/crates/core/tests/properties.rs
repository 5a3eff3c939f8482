//! Property tests for the AMM quote and transfer netting.

use ape_core::evm::{Address, Word};
use ape_core::fixtures::AmmPool;
use ape_core::profit::{net_flows, Asset, AssetTransfer};
use num_bigint::BigInt;
use proptest::prelude::*;

fn pool(rt: u128, re: u128) -> AmmPool {
    AmmPool {
        pool_address: Address::from_low_u64(0x9001),
        token_address: Address::from_low_u64(0x7001),
        reserve_token: Word::from(rt),
        reserve_e: Word::from(re),
    }
}

fn reserves() -> impl Strategy<Value = (u128, u128)> {
    (1u128..1u128 << 100, 1u128..1u128 << 100)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn quote_is_monotone((rt, re) in reserves(), a in 0u128..1u128 << 100, d in 0u128..1u128 << 90) {
        let p = pool(rt, re);
        prop_assert!(p.quote(Word::from(a)) <= p.quote(Word::from(a + d)));
    }

    #[test]
    fn quote_never_drains_the_pool((rt, re) in reserves(), a in 0u128..1u128 << 120) {
        prop_assert!(p_quote(rt, re, a) < num_bigint::BigUint::from(re));
    }

    /// Floors lose at most one wei per quote.
    #[test]
    fn quote_is_subadditive((rt, re) in reserves(), a in 0u128..1u128 << 100, b in 0u128..1u128 << 100) {
        let p = pool(rt, re);
        let whole = p.quote(Word::from(a + b));
        prop_assert!(whole <= p.quote(Word::from(a)) + p.quote(Word::from(b)) + 1u32);
    }

    /// Marginal output shrinks: the second half of a trade buys less than the first.
    #[test]
    fn quote_is_concave((rt, re) in reserves(), a in 0u128..1u128 << 100) {
        let p = pool(rt, re);
        let (q1, q2) = (p.quote(Word::from(a)), p.quote(Word::from(2 * a)));
        prop_assert!(&q2 - &q1 <= q1 + 1u32);
    }

    #[test]
    fn nets_sum_to_zero_per_asset(flows in proptest::collection::vec((0u8..2, 0u64..6, 0u64..6, 0u64..1_000_000), 0..24)) {
        let ts = transfers(&flows);
        for n in net_flows(&ts) {
            prop_assert_eq!(n.per_account.values().sum::<BigInt>(), BigInt::from(0));
        }
    }

    #[test]
    fn nets_ignore_transfer_order(flows in proptest::collection::vec((0u8..2, 0u64..6, 0u64..6, 0u64..1_000_000), 0..24), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let ts = transfers(&flows);
        let mut shuffled = ts.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let sorted = |t: &[AssetTransfer]| {
            let mut v = net_flows(t);
            v.sort_by_key(|n| n.asset);
            v
        };
        prop_assert_eq!(sorted(&ts), sorted(&shuffled));
    }
}

fn p_quote(rt: u128, re: u128, a: u128) -> num_bigint::BigUint {
    pool(rt, re).quote(Word::from(a))
}

fn transfers(flows: &[(u8, u64, u64, u64)]) -> Vec<AssetTransfer> {
    flows
        .iter()
        .map(|(asset, from, to, amount)| AssetTransfer {
            asset: if *asset == 0 { Asset::Native } else { Asset::Token(Address::from_low_u64(0x7001)) },
            from: Address::from_low_u64(0x100 + from),
            to: Address::from_low_u64(0x100 + to),
            amount: Word::from(*amount),
        })
        .collect()
}
