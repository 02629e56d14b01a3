use driftbench::prompt::{
    estimate_tokens, render_prompt, variants, Demonstration, Placement, PromptError, RenderOptions, Style, Task,
};
use proptest::prelude::*;

fn demo() -> impl Strategy<Value = Demonstration> {
    ("[a-z ]{1,120}", "[a-z(){};= \n]{1,600}").prop_map(|(t, c)| Demonstration::new(t, c))
}

fn task() -> impl Strategy<Value = Task> {
    prop_oneof![Just(Task::Summarize), Just(Task::Generate)]
}

fn style() -> impl Strategy<Value = Style> {
    prop_oneof![Just(Style::Completion), Just(Style::Chat)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn prompts_respect_budget_and_keep_demos_whole(
        task in task(),
        style in style(),
        pick in 0usize..12,
        demos in prop::collection::vec(demo(), 0..12),
        query in "[a-z ]{1,400}",
        budget in 200usize..3000,
        margin in 0usize..200,
        max_demos in 0usize..10,
    ) {
        let all = variants(task, style);
        let template = all[pick % all.len()];
        let opts = RenderOptions { budget, max_demos, output_margin: margin, placement: Placement::AsGiven };
        match render_prompt(template, &demos, &query, &opts) {
            Ok(p) => {
                prop_assert!(p.token_estimate <= budget);
                prop_assert!(p.demonstrations.len() <= max_demos);
                prop_assert_eq!(&p.demonstrations[..], &demos[..p.demonstrations.len()]);
                for d in &p.demonstrations {
                    prop_assert!(p.rendered.contains(&d.text));
                    prop_assert!(p.rendered.contains(&d.code));
                }
                // greedy: the next demonstration would not have fit
                let kept = p.demonstrations.len();
                if kept < demos.len().min(max_demos) {
                    let bigger = RenderOptions { budget: usize::MAX / 2, max_demos: kept + 1, output_margin: 0, placement: Placement::AsGiven };
                    let next = render_prompt(template, &demos, &query, &bigger).unwrap();
                    prop_assert!(next.token_estimate > budget.saturating_sub(margin));
                }
                let again = render_prompt(template, &demos, &query, &opts).unwrap();
                prop_assert_eq!(again, p);
            }
            Err(PromptError::QueryTooLarge { estimate, .. }) => prop_assert!(estimate > budget),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn most_similar_last_reverses_the_kept_prefix(demos in prop::collection::vec(demo(), 1..10)) {
        let template = variants(Task::Generate, Style::Completion)[0];
        let given = render_prompt(template, &demos, "q", &RenderOptions::default()).unwrap();
        let opts = RenderOptions { placement: Placement::MostSimilarLast, ..RenderOptions::default() };
        let reversed = render_prompt(template, &demos, "q", &opts).unwrap();
        let mut expected = given.demonstrations.clone();
        expected.reverse();
        prop_assert_eq!(reversed.demonstrations, expected);
    }

    #[test]
    fn token_estimate_is_monotone(a in ".{0,300}", b in ".{0,300}") {
        let joined = format!("{a}{b}");
        prop_assert!(estimate_tokens(&a) <= estimate_tokens(&joined));
        prop_assert_eq!(estimate_tokens(&a), (a.len().div_ceil(4) * 11).div_ceil(10));
    }
}

#[test]
fn estimate_examples() {
    assert_eq!(estimate_tokens(""), 0);
    assert_eq!(estimate_tokens(&"x".repeat(400)), 110);
}
