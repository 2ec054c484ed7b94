"""Answer-set evaluation metrics: per-question P/R/F1 with boundary
cases, macro averages (plain and QALD variant), whole-set F1, and exact
answer match."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import EmptyDataset


def prf1(gold: set[str], predicted: set[str]) -> tuple[float, float, float]:
    """Set precision/recall/F1 with the boundary rules: both empty ->
    (1,1,1); gold empty only -> R=F1=0; prediction empty only ->
    P=0 (the QALD variant overrides P at aggregation time)."""
    if not gold and not predicted:
        return 1.0, 1.0, 1.0
    overlap = len(gold & predicted)
    precision = overlap / len(predicted) if predicted else 0.0
    recall = overlap / len(gold) if gold else 0.0
    if precision + recall == 0.0:
        return precision, recall, 0.0
    return precision, recall, 2.0 * precision * recall / (precision + recall)


def answer_match(gold: set[str], predicted: set[str]) -> int:
    return int(gold == predicted)


@dataclass
class QuestionResult:
    id: str
    gold: set[str]
    predicted: set[str]
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    am: int = 0

    @classmethod
    def compute(cls, qid: str, gold: set[str], predicted: set[str]) -> "QuestionResult":
        p, r, f = prf1(gold, predicted)
        return cls(qid, gold, predicted, p, r, f, answer_match(gold, predicted))


def macro_metrics(
    results: list[QuestionResult], qald_mode: bool = False
) -> tuple[float, float, float]:
    """Average per-question P/R/F1. In QALD mode a question with empty
    prediction but nonempty gold contributes P=1 (its F1 stays 0 since
    R=0)."""
    if not results:
        raise EmptyDataset("no results to aggregate")
    ps, rs, fs = [], [], []
    for r in results:
        p = r.precision
        if qald_mode and not r.predicted and r.gold:
            p = 1.0
        ps.append(p)
        rs.append(r.recall)
        fs.append(r.f1)
    n = len(results)
    return sum(ps) / n, sum(rs) / n, sum(fs) / n


def wholeset_f1(macro_p: float, macro_r: float) -> float:
    """Harmonic mean of macro precision and recall."""
    if macro_p + macro_r == 0.0:
        return 0.0
    return 2.0 * macro_p * macro_r / (macro_p + macro_r)


@dataclass
class EvalReport:
    results: list[QuestionResult] = field(default_factory=list)
    macro_precision: float = 0.0
    macro_recall: float = 0.0
    macro_f1: float = 0.0
    macro_precision_qald: float = 0.0
    macro_f1_qald: float = 0.0
    wholeset_f1: float = 0.0
    am_rate: float = 0.0
    n_questions: int = 0
    n_empty_predictions: int = 0

    @classmethod
    def compute(cls, results: list[QuestionResult]) -> "EvalReport":
        if not results:
            raise EmptyDataset("no results to aggregate")
        p, r, f = macro_metrics(results, qald_mode=False)
        pq, _rq, fq = macro_metrics(results, qald_mode=True)
        return cls(
            results=results,
            macro_precision=p,
            macro_recall=r,
            macro_f1=f,
            macro_precision_qald=pq,
            macro_f1_qald=fq,
            wholeset_f1=wholeset_f1(p, r),
            am_rate=sum(x.am for x in results) / len(results),
            n_questions=len(results),
            n_empty_predictions=sum(1 for x in results if not x.predicted),
        )

    def to_dict(self) -> dict:
        return {
            "n_questions": self.n_questions,
            "n_empty_predictions": self.n_empty_predictions,
            "am_rate": self.am_rate,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "macro_precision_qald": self.macro_precision_qald,
            "macro_f1_qald": self.macro_f1_qald,
            "wholeset_f1": self.wholeset_f1,
            "per_question": [
                {
                    "id": r.id,
                    "gold": sorted(r.gold),
                    "predicted": sorted(r.predicted),
                    "precision": r.precision,
                    "recall": r.recall,
                    "f1": r.f1,
                    "am": r.am,
                }
                for r in self.results
            ],
        }
