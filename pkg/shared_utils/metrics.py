"""Delivery metrics: expected versus observed (subscriber, message) deliveries."""

from collections import Counter
from typing import Dict, Hashable, Iterable


def evaluate_delivery(expected: Iterable[Hashable], actual: Iterable[Hashable]) -> Dict[str, float]:
    """
    Compare the deliveries that should have happened with those that did.

    Args:
        expected: Expected delivery keys, typically ``(subscriber, message_id)``
        actual: Observed delivery keys; repeats count as duplicates

    Returns:
        Dictionary with precision, recall, f1_score, missed, extra, duplicates
        and is_exactly_once
    """
    expected_set = set(expected)
    counts = Counter(actual)
    actual_set = set(counts)
    duplicates = sum(n - 1 for n in counts.values() if n > 1)

    if not expected_set and not actual_set:
        return {
            "precision": 1.0,
            "recall": 1.0,
            "f1_score": 1.0,
            "missed": 0,
            "extra": 0,
            "duplicates": 0,
            "is_exactly_once": True,
        }

    correct = expected_set & actual_set
    precision = len(correct) / len(actual_set) if actual_set else 0.0
    recall = len(correct) / len(expected_set) if expected_set else 0.0
    f1_score = 2 * (precision * recall) / (precision + recall) if (precision + recall) > 0 else 0.0

    return {
        "precision": precision,
        "recall": recall,
        "f1_score": f1_score,
        "missed": len(expected_set - actual_set),
        "extra": len(actual_set - expected_set),
        "duplicates": duplicates,
        "is_exactly_once": expected_set == actual_set and duplicates == 0,
    }
