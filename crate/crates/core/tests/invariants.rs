use proptest::prelude::*;
use rllcap::constraint::kernel_product;
use rllcap::exact::brute_force_count;
use rllcap::region::{build_region_graph_with, RegionGraphOptions};
use rllcap::{
    build_factor_graph, build_kernels, is_admissible, plan_basic_regions, validate_region_graph,
    AxisRule, BinaryArray, GridShape, RllSpec,
};

fn axis_rule() -> impl Strategy<Value = AxisRule> {
    (0usize..4, prop::option::of(1usize..5)).prop_filter_map("k >= d", |(d, k)| {
        AxisRule::new(d, k.map(|k| k + d)).ok()
    })
}

fn spec_and_array(dims: usize) -> impl Strategy<Value = (RllSpec, BinaryArray)> {
    let extents = prop::collection::vec(1usize..6, dims);
    let rules = prop::collection::vec(axis_rule(), dims);
    (rules, extents).prop_flat_map(|(rules, extents)| {
        let shape = GridShape::new(extents).unwrap();
        let n = shape.cell_count();
        let spec = RllSpec::new(rules).unwrap();
        prop::collection::vec(0u8..2, n).prop_map(move |cells| {
            (spec.clone(), BinaryArray::new(shape.clone(), cells).unwrap())
        })
    })
}

/// Run-length reading of the rules, one axis line at a time. A line
/// shorter than d + 1 holds no window of the d rule, so it is unrestricted.
fn run_length_oracle(x: &BinaryArray, spec: &RllSpec) -> bool {
    let shape = x.shape();
    let pad = shape.padded();
    for (axis, rule) in spec.axes().iter().enumerate() {
        let len = pad[axis];
        for start in 0..shape.cell_count() {
            let c = shape.coords(start);
            if c[axis] != 0 {
                continue;
            }
            let line: Vec<u8> = (0..len)
                .map(|t| {
                    let mut p = c;
                    p[axis] = t;
                    x.get(p)
                })
                .collect();
            let ones: Vec<usize> = (0..len).filter(|&t| line[t] == 1).collect();
            if len > rule.d && ones.windows(2).any(|w| w[1] - w[0] <= rule.d) {
                return false;
            }
            if let Some(k) = rule.k {
                let mut run = 0;
                for &v in &line {
                    run = if v == 0 { run + 1 } else { 0 };
                    if run > k {
                        return false;
                    }
                }
            }
        }
    }
    true
}

proptest! {
    #[test]
    fn kernels_agree_with_run_lengths_2d((spec, x) in spec_and_array(2)) {
        let direct = is_admissible(&x, &spec).unwrap();
        prop_assert_eq!(direct, run_length_oracle(&x, &spec));
        prop_assert_eq!(kernel_product(&x, &build_kernels(&spec)) == 1, direct);
    }

    #[test]
    fn kernels_agree_with_run_lengths_3d((spec, x) in spec_and_array(3)) {
        let direct = is_admissible(&x, &spec).unwrap();
        prop_assert_eq!(direct, run_length_oracle(&x, &spec));
        prop_assert_eq!(kernel_product(&x, &build_kernels(&spec)) == 1, direct);
    }

    #[test]
    fn factor_graph_weight_is_the_indicator((spec, x) in spec_and_array(2)) {
        let g = build_factor_graph(x.shape(), &spec).unwrap();
        let w = g.weight(x.cells());
        prop_assert_eq!(w, if is_admissible(&x, &spec).unwrap() { 1.0 } else { 0.0 });
    }

    #[test]
    fn transposition_preserves_admissibility((spec, x) in spec_and_array(2)) {
        prop_assert_eq!(
            is_admissible(&x, &spec).unwrap(),
            is_admissible(&x.transpose(), &spec.transpose()).unwrap()
        );
        prop_assert_eq!(x.transpose().transpose(), x);
    }

    #[test]
    fn loosening_a_rule_never_rejects((spec, x) in spec_and_array(2), axis in 0usize..2) {
        prop_assume!(is_admissible(&x, &spec).unwrap());
        let rule = spec.axes()[axis];
        let mut looser = Vec::new();
        if let Some(k) = rule.k {
            looser.push(AxisRule::new(rule.d, Some(k + 1)).unwrap());
            looser.push(AxisRule::unbounded(rule.d));
        }
        // A line shorter than d + 1 carries no d window at all, so lowering
        // d there adds a restriction.
        if rule.d > 0 && x.shape().extents()[axis] > rule.d {
            looser.push(AxisRule::new(rule.d - 1, rule.k).unwrap());
        }
        for r in looser {
            let mut axes = spec.axes().to_vec();
            axes[axis] = r;
            prop_assert!(is_admissible(&x, &RllSpec::new(axes).unwrap()).unwrap());
        }
    }

    #[test]
    fn text_round_trip((_spec, x) in spec_and_array(2)) {
        prop_assert_eq!(BinaryArray::parse_text(&x.to_text()).unwrap(), x);
    }

    #[test]
    fn counts_are_monotone_in_d(d in 0usize..3, m in 2usize..4, n in 2usize..5) {
        // Only when every line can hold a window of the tighter rule.
        prop_assume!(m.min(n) >= d + 2);
        let shape = GridShape::new(vec![m, n]).unwrap();
        let loose = brute_force_count(&RllSpec::uniform(2, d, None).unwrap(), &shape).unwrap();
        let tight = brute_force_count(&RllSpec::uniform(2, d + 1, None).unwrap(), &shape).unwrap();
        prop_assert!(tight.value <= loose.value);
    }

    #[test]
    fn counts_are_transpose_invariant(rules in prop::collection::vec(axis_rule(), 2), m in 1usize..5, n in 1usize..5) {
        let spec = RllSpec::new(rules).unwrap();
        let shape = GridShape::new(vec![m, n]).unwrap();
        let a = brute_force_count(&spec, &shape).unwrap();
        let b = brute_force_count(&spec.transpose(), &shape.transpose()).unwrap();
        prop_assert_eq!(a.value, b.value);
    }

    #[test]
    fn counting_numbers_sum_to_one(
        rules in prop::collection::vec((1usize..3, prop::option::of(1usize..3)), 2),
        extra in prop::collection::vec(0usize..4, 2),
        prune in any::<bool>(),
    ) {
        let axes: Vec<AxisRule> = rules
            .iter()
            .map(|&(d, k)| AxisRule::new(d, k.map(|k| k + d)).unwrap())
            .collect();
        let spec = RllSpec::new(axes).unwrap();
        let plan = plan_basic_regions(&spec);
        let extents: Vec<usize> = plan.extents.iter().zip(&extra).map(|(p, e)| p + e).collect();
        let shape = GridShape::new(extents).unwrap();
        let g = build_factor_graph(&shape, &spec).unwrap();
        let rg = build_region_graph_with(g, &plan, RegionGraphOptions { drop_zero_counting: prune }).unwrap();
        let report = validate_region_graph(&rg);
        prop_assert!(report.passed(), "{:?}", report.violations);
        prop_assert!(report.variable_sums.iter().all(|&s| s == 1));
        prop_assert!(report.factor_sums.iter().all(|&s| s == 1));
    }
}
