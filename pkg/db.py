import os
import json
import logging
import time
from datetime import datetime
from typing import Optional

from sqlalchemy import create_engine, text
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import NullPool
from sqlalchemy.exc import SQLAlchemyError, OperationalError
from dotenv import load_dotenv

from models import Base, Run

logger = logging.getLogger(__name__)

load_dotenv()  # Load from .env file

# The run registry is optional: without DATABASE_URL manifests only go to disk.
DATABASE_URL = os.getenv("DATABASE_URL")

engine = None
SessionLocal = None


def configure(url: Optional[str] = None) -> bool:
    """(Re)bind the registry to a database URL; returns whether a registry is active."""
    global engine, SessionLocal
    url = DATABASE_URL if url is None else url
    if not url:
        engine, SessionLocal = None, None
        return False
    try:
        # NullPool suits short-lived CLI runs; in-memory SQLite needs its single connection kept
        pool_kwargs = {} if url in ("sqlite://", "sqlite:///:memory:") else {"poolclass": NullPool}
        engine = create_engine(url, echo=False, **pool_kwargs)
        SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)
        logger.debug("✅ Database engine created successfully")
        return True
    except Exception as e:
        logger.error(f"❌ Failed to create database engine: {e}")
        engine, SessionLocal = None, None
        raise


def init_db(max_retries: int = 3, retry_delay: int = 5):
    """Create tables (for local dev only; use Alembic migrations elsewhere)."""
    if engine is None:
        raise RuntimeError("run registry is not configured; set DATABASE_URL")

    for attempt in range(max_retries):
        try:
            logger.info(f"🔄 Attempting to initialize database (attempt {attempt + 1}/{max_retries})...")
            Base.metadata.create_all(bind=engine)
            logger.info("✅ Database tables created successfully")
            return
        except OperationalError as e:
            logger.error(f"❌ Database connection failed (attempt {attempt + 1}/{max_retries}): {e}")
            if attempt < max_retries - 1:
                logger.info(f"⏳ Retrying in {retry_delay} seconds...")
                time.sleep(retry_delay)
            else:
                logger.error("❌ All database initialization attempts failed")
                raise
        except SQLAlchemyError as e:
            logger.error(f"❌ Database schema error: {e}")
            raise


def get_session():
    """Returns a new SQLAlchemy session."""
    if SessionLocal is None:
        raise RuntimeError("run registry is not configured; set DATABASE_URL")
    try:
        session = SessionLocal()
        logger.debug("✅ Database session created")
        return session
    except SQLAlchemyError as e:
        logger.error(f"❌ Failed to create database session: {e}")
        raise


def test_connection():
    """Test database connection."""
    try:
        session = get_session()
        session.execute(text("SELECT 1"))
        session.close()
        logger.info("✅ Database connection test successful")
        return True
    except Exception as e:
        logger.error(f"❌ Database connection test failed: {e}")
        return False


def record_run(manifest: dict, output_directory: str) -> Optional[int]:
    """Store a run manifest; failures are logged and never propagate."""
    if SessionLocal is None:
        return None
    session = None
    try:
        session = get_session()
        run = Run(
            command=manifest["command"],
            parameters=json.dumps(manifest["parameters"], sort_keys=True),
            input_digests=json.dumps(manifest["inputs"], sort_keys=True),
            seed=manifest.get("seed"),
            version=manifest["version"],
            output_directory=output_directory,
            started_at=datetime.fromisoformat(manifest["started_at"]),
            duration_seconds=manifest["duration_seconds"],
        )
        session.add(run)
        session.commit()
        logger.info(f"🔗 Run {run.id} recorded in registry")
        return run.id
    except Exception as e:
        logger.warning(f"⚠️ Could not record run in registry: {e}")
        if session is not None:
            session.rollback()
        return None
    finally:
        if session is not None:
            session.close()


configure()
