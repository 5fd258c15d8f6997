"""Mobility-diary language, the Markov diary model and the baseline diary generators."""
from .baselines import rd_generate, sample_waiting_times, waiting_time_density, wt_generate
from .language import (
    DiaryToken,
    MobilityDiary,
    TypicalDiary,
    diary_from_trajectory,
    home_typical_diary,
    validate_diary,
)
from .markov import (
    MarkovDiaryModel,
    count_transitions,
    diary_log_likelihood,
    load_model,
    md_generate,
    mdl_learn,
    model_from_dict,
    model_to_dict,
    save_model,
)
