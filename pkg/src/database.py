"""
Optional run registry for training and evaluation runs.
"""
import json
import logging
import os
from contextlib import contextmanager
from datetime import datetime, timezone
from typing import Iterator, List, Optional

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text, create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, declarative_base, sessionmaker

from .models import MetricsReport

logger = logging.getLogger(__name__)

Base = declarative_base()


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class TrainingRun(Base):
    """Training run records table."""
    __tablename__ = "training_runs"

    id = Column(Integer, primary_key=True, index=True)
    model_path = Column(String, index=True)
    variant = Column(String)  # DPN or DPN-SE
    seed = Column(String)  # u64 does not fit a signed INTEGER column
    epochs = Column(Integer)
    final_loss = Column(Float, nullable=True)
    final_accuracy = Column(Float, nullable=True)
    val_accuracy = Column(Float, nullable=True)
    config = Column(Text)  # JSON string
    created_at = Column(DateTime, default=_utcnow)


class EvaluationRecord(Base):
    """Evaluation results table."""
    __tablename__ = "evaluations"

    id = Column(Integer, primary_key=True, index=True)
    training_run_id = Column(Integer, ForeignKey("training_runs.id"), nullable=True)
    model_path = Column(String, index=True)
    split = Column(String)
    overall_accuracy = Column(Float)
    report = Column(Text)  # JSON string
    created_at = Column(DateTime, default=_utcnow)


def database_url(explicit: Optional[str] = None) -> Optional[str]:
    """--db flag first, then XRAYDPN_DATABASE_URL; None disables the registry."""
    return explicit or os.getenv("XRAYDPN_DATABASE_URL") or None


def make_engine(url: str) -> Engine:
    return create_engine(url, connect_args={"check_same_thread": False} if url.startswith("sqlite") else {})


class RunRegistry:
    """Records training runs and evaluations in a SQL database."""

    def __init__(self, url: str):
        self.engine = make_engine(url)
        self.SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=self.engine)
        self.create_tables()

    def create_tables(self) -> None:
        Base.metadata.create_all(bind=self.engine)

    @contextmanager
    def session(self) -> Iterator[Session]:
        db = self.SessionLocal()
        try:
            yield db
            db.commit()
        except Exception:
            db.rollback()
            raise
        finally:
            db.close()

    def record_training(self, model_path: str, variant: str, seed: int, epochs: int, config_json: str,
                        final_loss: Optional[float] = None, final_accuracy: Optional[float] = None,
                        val_accuracy: Optional[float] = None) -> int:
        with self.session() as db:
            run = TrainingRun(model_path=model_path, variant=variant, seed=str(seed), epochs=epochs,
                              final_loss=final_loss, final_accuracy=final_accuracy,
                              val_accuracy=val_accuracy, config=config_json)
            db.add(run)
            db.flush()
            run_id = run.id
        logger.info("recorded training run %d for %s", run_id, model_path)
        return run_id

    def record_evaluation(self, model_path: str, split: str, report: MetricsReport) -> int:
        with self.session() as db:
            latest = (
                db.query(TrainingRun)
                .filter(TrainingRun.model_path == model_path)
                .order_by(TrainingRun.id.desc())
                .first()
            )
            record = EvaluationRecord(
                training_run_id=latest.id if latest else None,
                model_path=model_path,
                split=split,
                overall_accuracy=report.overall_accuracy,
                report=json.dumps(report.model_dump(mode="json")),
            )
            db.add(record)
            db.flush()
            record_id = record.id
        return record_id

    def training_runs(self) -> List[TrainingRun]:
        with self.session() as db:
            runs = db.query(TrainingRun).order_by(TrainingRun.id).all()
            db.expunge_all()
        return runs

    def evaluations(self, model_path: Optional[str] = None) -> List[EvaluationRecord]:
        with self.session() as db:
            query = db.query(EvaluationRecord)
            if model_path is not None:
                query = query.filter(EvaluationRecord.model_path == model_path)
            records = query.order_by(EvaluationRecord.id).all()
            db.expunge_all()
        return records
