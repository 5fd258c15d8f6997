import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from threading import Lock
from typing import Any, Callable, List, Sequence, Tuple

from .config import CONFIG, EngineConfig, GenerationStats

logger = logging.getLogger(__name__)


class DiarySimError(Exception):
    """Base exception for all library errors."""
    pass


class ConfigError(DiarySimError):
    """Invalid or inconsistent parameters."""
    pass


class ConfigMismatchError(ConfigError):
    """Model, tessellation and run parameters disagree."""
    pass


class DataError(DiarySimError):
    """Input data cannot support the requested computation."""
    pass


class EmptyUserError(DataError):
    pass


class EmptyCorpusError(DataError):
    pass


class EmptyRelevanceError(DataError):
    pass


class DegenerateDistanceError(DataError):
    pass


class EmptyDistributionError(DataError):
    pass


class IncomparableDistributionsError(DataError):
    pass


class InsufficientHistoryError(DataError):
    pass


class InsufficientPointsError(DataError):
    pass


class UndefinedSilhouetteError(DataError):
    pass


class MalformedRecordError(DataError):
    """A CSV row that cannot be parsed; carries the file and 1-based line number."""

    def __init__(self, path: str, line: int, reason: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {reason}")


class GenerationError(DataError):
    """A trajectory generator failed for one agent."""

    def __init__(self, agent: int, slot: int, cause: Exception):
        self.agent = agent
        self.slot = slot
        super().__init__(f"agent {agent} slot {slot}: {cause}")


AgentResult = Tuple[Any, GenerationStats]


class AgentBatchProcessor:
    """Runs a per-agent function over agent indices, optionally on a thread pool.

    Results come back in agent-index order whatever the completion order, so a
    threaded run is indistinguishable from a sequential one.
    """

    def __init__(self, config: EngineConfig = None):
        self.config = config or CONFIG.engine
        self.stats = GenerationStats()
        self.stats_lock = Lock()

    def process(self, agents: Sequence[int], processor: Callable[[int], AgentResult]) -> List[Any]:
        if self.config.enable_threading and self.config.max_workers > 1 and len(agents) > 1:
            return self._process_threaded(agents, processor)
        return self._process_sequential(agents, processor)

    def _process_sequential(self, agents: Sequence[int], processor: Callable[[int], AgentResult]) -> List[Any]:
        results = []
        for i, agent in enumerate(agents):
            result, agent_stats = processor(agent)
            results.append(result)
            self.stats.add_stats(agent_stats)
            if (i + 1) % self.config.progress_log_frequency == 0:
                logger.info(f"⏳ Generated {i + 1}/{len(agents)} agents")
        return results

    def _process_threaded(self, agents: Sequence[int], processor: Callable[[int], AgentResult]) -> List[Any]:
        chunk_size = max(1, min(self.config.chunk_size, len(agents) // self.config.max_workers or 1))
        chunks = [list(range(i, min(i + chunk_size, len(agents)))) for i in range(0, len(agents), chunk_size)]
        results: List[Any] = [None] * len(agents)
        done = 0

        logger.info(f"Processing {len(agents)} agents in {len(chunks)} chunks using {self.config.max_workers} threads")

        with ThreadPoolExecutor(max_workers=self.config.max_workers) as executor:
            future_to_chunk = {
                executor.submit(self._process_chunk, [agents[p] for p in chunk], processor): chunk
                for chunk in chunks
            }
            for future in as_completed(future_to_chunk):
                chunk = future_to_chunk[future]
                try:
                    chunk_results, chunk_stats = future.result()
                except Exception as e:
                    logger.error(f"❌ Error processing agents {chunk[0]}..{chunk[-1]}: {e}")
                    for pending in future_to_chunk:
                        pending.cancel()
                    raise
                for position, result in zip(chunk, chunk_results):
                    results[position] = result
                with self.stats_lock:
                    self.stats.add_stats(chunk_stats)
                    done += len(chunk)
                logger.debug(f"⏳ Generated {done}/{len(agents)} agents")

        return results

    @staticmethod
    def _process_chunk(agents: List[int], processor: Callable[[int], AgentResult]) -> Tuple[List[Any], GenerationStats]:
        chunk_stats = GenerationStats()
        chunk_results = []
        for agent in agents:
            result, agent_stats = processor(agent)
            chunk_results.append(result)
            chunk_stats.add_stats(agent_stats)
        return chunk_results, chunk_stats
