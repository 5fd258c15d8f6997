import logging
from collections import Counter
from typing import Callable, Dict, Hashable, List, Mapping, Set, Tuple

from ..config import CONFIG, CdrFilterConfig
from .records import RawRecord, coordinate_key

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400


def filter_cdr_locations(counts: Mapping[Hashable, int], min_freq: float) -> Tuple[Dict[Hashable, int], bool]:
    """Drop locations with visit frequency n_i/N <= min_freq.

    Returns the surviving counts and whether the user should be discarded
    (one location or fewer left).
    """
    if not 0 <= min_freq <= 1:
        raise ValueError(f"min_freq must lie in [0, 1], got {min_freq}")
    total = sum(counts.values())
    if total == 0:
        return {}, True
    kept = {loc: n for loc, n in counts.items() if n > 0 and n / total > min_freq}
    return kept, len(kept) <= 1


def filter_active_users(call_counts: Mapping[str, int], hours: float, days: float, min_rate: float) -> Set[str]:
    """Users whose call rate N/(hours*days) reaches min_rate."""
    if hours <= 0 or days <= 0:
        raise ValueError("hours and days must be positive")
    return {user for user, n in call_counts.items() if n / (hours * days) >= min_rate}


def observation_days(records_by_user: Mapping[str, List[RawRecord]]) -> int:
    """Calendar days spanned by the whole corpus, at least 1."""
    first = min(records[0].timestamp for records in records_by_user.values() if records)
    last = max(records[-1].timestamp for records in records_by_user.values() if records)
    return max(1, last // SECONDS_PER_DAY - first // SECONDS_PER_DAY + 1)


def apply_cdr_filters(
    records_by_user: Mapping[str, List[RawRecord]],
    config: CdrFilterConfig = None,
    days: int = None,
    key: Callable[[RawRecord], Hashable] = coordinate_key,
) -> Dict[str, List[RawRecord]]:
    """Location-frequency filter per user, then the activity filter over the survivors."""
    config = config or CONFIG.cdr
    if not records_by_user:
        return {}
    days = days or observation_days(records_by_user)

    located: Dict[str, List[RawRecord]] = {}
    flagged = 0
    for user, records in records_by_user.items():
        counts = Counter(key(r) for r in records)
        kept, discard = filter_cdr_locations(counts, config.min_location_freq)
        if discard:
            flagged += 1
            continue
        located[user] = [r for r in records if key(r) in kept]

    active = filter_active_users(
        {user: len(records) for user, records in located.items()},
        hours=config.hours_per_day, days=days, min_rate=config.min_call_rate,
    )
    result = {user: records for user, records in located.items() if user in active}
    logger.info(
        f"📋 CDR filters: {len(records_by_user)} users → {len(located)} after location filter "
        f"({flagged} flagged) → {len(result)} active over {days} days"
    )
    return result
