//! Delimited tables for leaderboards, sweeps and analytics.
//!
//! Tables are comma-separated with a header row. Speedups and scores use
//! three decimals; absent values print as `-`.

use std::fmt::Write;

use crate::model::ScoreCard;
use crate::routing::{gini, hot_experts, ExpertLoad};
use crate::statistics::{GapRow, IntervalRow, SweepRow};

fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

fn opt3(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), fmt3)
}

/// Agents ranked by `Score_default` (descending), ties by agent id, with
/// every component metric as a column.
pub fn emit_leaderboard(cards: &[ScoreCard]) -> String {
    let mut sorted: Vec<&ScoreCard> = cards.iter().collect();
    sorted.sort_by(|a, b| b.score_default.total_cmp(&a.score_default).then_with(|| a.agent_id.cmp(&b.agent_id)));
    let mut out = String::from(
        "rank,agent,score_default,s_macro_lat,s_macro_bal,s_macro_thr,c_macro,coverage,coverage_macro,fast@1,fast@1.5\n",
    );
    for (rank, c) in sorted.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            rank + 1,
            c.agent_id,
            fmt3(c.score_default),
            opt3(c.s_macro.latency_only),
            opt3(c.s_macro.balanced),
            opt3(c.s_macro.throughput_only),
            fmt3(c.c_macro),
            fmt3(c.coverage_item),
            fmt3(c.coverage_macro),
            c.fast_at_1,
            c.fast_at_1_5,
        );
    }
    out
}

/// Per-family breakdown of one scorecard followed by a macro row.
pub fn scorecard_table(card: &ScoreCard) -> String {
    let mut out = String::from("agent,family,items,valid,correctness,coverage,s_lat,s_bal,s_thr\n");
    for (family, b) in &card.per_family {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            card.agent_id,
            family,
            b.item_count,
            b.valid_count,
            fmt3(b.correctness),
            fmt3(b.coverage),
            opt3(b.speedup.latency_only),
            opt3(b.speedup.balanced),
            opt3(b.speedup.throughput_only),
        );
    }
    let _ = writeln!(
        out,
        "{},(macro),{},{},{},{},{},{},{}",
        card.agent_id,
        card.item_count,
        card.valid_count,
        fmt3(card.c_macro),
        fmt3(card.coverage_macro),
        opt3(card.s_macro.latency_only),
        opt3(card.s_macro.balanced),
        opt3(card.s_macro.throughput_only),
    );
    out
}

/// One row per (scale, level) plus an `all` row per scale.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("scale,level,correct,total,geomean\n");
    for r in rows {
        for (level, s) in &r.per_level {
            let _ = writeln!(out, "{},L{},{},{},{}", r.scale, level, s.correct, s.total, opt3(s.geomean));
        }
        let c = &r.combined;
        let _ = writeln!(out, "{},all,{},{},{}", r.scale, c.correct, c.total, opt3(c.geomean));
    }
    out
}

pub fn gap_table(rows: &[GapRow]) -> String {
    let mut out = String::from("policy,coverage,geomean\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.policy, r.coverage(), opt3(r.geomean));
    }
    out
}

pub fn interval_table(rows: &[IntervalRow]) -> String {
    let mut out = String::from("label,n,method,point,lo,hi\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.label,
            r.n,
            r.method.as_str(),
            fmt3(r.point),
            fmt3(r.lo),
            fmt3(r.hi)
        );
    }
    out
}

/// Source, Gini and the `top` hottest experts (space-separated) per load.
pub fn routing_table(loads: &[ExpertLoad], top: usize) -> String {
    let mut out = format!("source,experts,gini,top{top}\n");
    for l in loads {
        let hot: Vec<String> = hot_experts(l, top).iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{},{},{},{}", l.source, l.num_experts, fmt3(gini(l)), hot.join(" "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ByLambda;
    use std::collections::{BTreeMap, BTreeSet};

    fn card(agent: &str, score: f64, s: Option<f64>) -> ScoreCard {
        ScoreCard {
            agent_id: agent.into(),
            c_macro: 1.0,
            coverage_item: 1.0,
            coverage_macro: 1.0,
            coverage_attempted: 1.0,
            s_macro: ByLambda { latency_only: s, balanced: s, throughput_only: s },
            score_default: score,
            fast_at_1: 0,
            fast_at_1_5: 0,
            item_count: 1,
            attempted_count: 1,
            valid_count: 1,
            per_family: BTreeMap::new(),
            valid_families: BTreeSet::new(),
            ci_by_family: None,
            items: Vec::new(),
        }
    }

    fn agents(table: &str) -> Vec<String> {
        table.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().to_string()).collect()
    }

    #[test]
    fn sorted_by_score_then_id() {
        let cards = [card("c", 0.5, Some(1.0)), card("a", 0.9, Some(1.0)), card("b", 0.5, Some(1.0))];
        assert_eq!(agents(&emit_leaderboard(&cards)), ["a", "b", "c"]);
    }

    #[test]
    fn absent_speedup_ranks_last_with_dashes() {
        let cards = [card("zero", 0.0, None), card("one", 0.2, Some(0.2))];
        let table = emit_leaderboard(&cards);
        assert_eq!(agents(&table), ["one", "zero"]);
        assert!(table.lines().nth(2).unwrap().contains(",0.000,-,-,-,"));
        assert_eq!(emit_leaderboard(&cards[..1]).lines().count(), 2);
    }
}
