from datetime import datetime
from sqlalchemy import BigInteger, Column, DateTime, Float, Integer, String, Text
from sqlalchemy.orm import declarative_base

Base = declarative_base()


class Run(Base):
    """One CLI invocation and the provenance needed to reproduce it."""
    __tablename__ = "runs"
    id = Column(Integer, primary_key=True)
    command = Column(String, nullable=False)            # learn, generate, measure, ...
    parameters = Column(Text, nullable=False)           # JSON of the resolved flags
    input_digests = Column(Text, nullable=False)        # JSON path -> sha256
    seed = Column(BigInteger, nullable=True)            # only for stochastic commands
    version = Column(String, nullable=False)
    output_directory = Column(String, nullable=False)

    started_at = Column(DateTime, nullable=False)
    duration_seconds = Column(Float, nullable=False)

    created_at = Column(DateTime, default=datetime.utcnow)
