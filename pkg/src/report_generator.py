"""
Evaluation report generator.

Renders a MetricsReport as JSON, as an aligned text table
(Class | Precision | Recall | F-measure, Overall accuracy footer) and as PDF.
"""
import json
import logging
from datetime import datetime, timezone
from io import BytesIO
from typing import Dict, List, Optional

try:
    from reportlab.lib.colors import HexColor, black
    from reportlab.lib.pagesizes import A4
    from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
    from reportlab.lib.units import inch
    from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle
    REPORTLAB_AVAILABLE = True
except ImportError:
    REPORTLAB_AVAILABLE = False

from . import __version__
from .models import MetricsReport

logger = logging.getLogger(__name__)


class ReportGenerator:
    """Generates evaluation reports in various formats."""

    def __init__(self, decimals: int = 2):
        self.decimals = decimals
        self.styles = self._setup_styles() if REPORTLAB_AVAILABLE else None

    def _setup_styles(self) -> Dict:
        styles = getSampleStyleSheet()
        custom_styles = {
            'Title': ParagraphStyle(
                'ReportTitle',
                parent=styles['Heading1'],
                fontSize=18,
                spaceAfter=20,
                textColor=HexColor('#1f4788')
            ),
            'Heading2': ParagraphStyle(
                'ReportHeading2',
                parent=styles['Heading2'],
                fontSize=13,
                spaceBefore=14,
                spaceAfter=8,
                textColor=HexColor('#2c5aa0')
            ),
        }
        return {**styles.byName, **custom_styles}

    def _fmt(self, value: float) -> str:
        return f"{value:.{self.decimals}f}"

    def generate_json_report(self, report: MetricsReport, additional_context: Optional[Dict] = None) -> Dict:
        """
        Build the JSON document for an evaluation.

        Args:
            report: Computed metrics
            additional_context: Extra fields such as model path or split name

        Returns:
            Dictionary with report metadata, the metrics and the context
        """
        return {
            "report_metadata": {
                "report_type": "classification evaluation",
                "toolkit_version": __version__,
            },
            "metrics": report.model_dump(mode="json"),
            "additional_context": additional_context or {},
        }

    def table_rows(self, report: MetricsReport) -> List[List[str]]:
        rows = [["Class", "Precision", "Recall", "F-measure"]]
        for metrics in report.per_class:
            rows.append([metrics.name, self._fmt(metrics.precision), self._fmt(metrics.recall), self._fmt(metrics.f1)])
        return rows

    def generate_text_table(self, report: MetricsReport) -> str:
        """Aligned plain-text table; numbers come from the same report as the JSON."""
        rows = self.table_rows(report)
        name_width = max(len(row[0]) for row in rows)
        col_width = max(len(cell) for row in rows for cell in row[1:])
        lines = []
        for row in rows:
            cells = [row[0].ljust(name_width)] + [cell.rjust(col_width) for cell in row[1:]]
            lines.append(" | ".join(cells))
        lines.insert(1, "-" * len(lines[0]))
        lines.append("-" * len(lines[0]))
        lines.append(f"Overall accuracy: {self._fmt(report.overall_accuracy)}")
        return "\n".join(lines) + "\n"

    def generate_pdf_report(self, report: MetricsReport, title: str = "Classification Report",
                            output_path: Optional[str] = None) -> bytes:
        """
        Render the per-class table and confusion matrix as a PDF.

        Args:
            report: Computed metrics
            title: Document title
            output_path: Optional file path to save the PDF

        Returns:
            PDF content as bytes
        """
        if not REPORTLAB_AVAILABLE:
            raise ImportError("ReportLab is required for PDF generation. Install with: pip install reportlab")

        buffer = BytesIO()
        doc = SimpleDocTemplate(buffer, pagesize=A4, rightMargin=inch, leftMargin=inch,
                                topMargin=inch, bottomMargin=inch, invariant=True)
        story = []
        story.append(Paragraph(title, self.styles['Title']))
        story.append(Paragraph(
            f"<b>Overall accuracy:</b> {self._fmt(report.overall_accuracy)}<br/>"
            f"<b>Positive class:</b> {report.positive_class}<br/>"
            f"<b>Generated:</b> {datetime.now(timezone.utc).strftime('%Y-%m-%d')}",
            self.styles['Normal']
        ))
        story.append(Spacer(1, 0.2 * inch))

        story.append(Paragraph("Per-class metrics", self.styles['Heading2']))
        story.append(self._table(self.table_rows(report)))

        story.append(Paragraph("Confusion matrix (rows: true, columns: predicted)", self.styles['Heading2']))
        matrix = [[""] + report.class_names]
        matrix += [[name] + [str(v) for v in row] for name, row in zip(report.class_names, report.confusion)]
        story.append(self._table(matrix))

        doc.build(story)
        pdf_content = buffer.getvalue()
        buffer.close()
        if output_path:
            with open(output_path, 'wb') as f:
                f.write(pdf_content)
            logger.info("wrote PDF report to %s", output_path)
        return pdf_content

    def _table(self, rows: List[List[str]]) -> "Table":
        table = Table(rows)
        table.setStyle(TableStyle([
            ('BACKGROUND', (0, 0), (-1, 0), HexColor('#f0f0f0')),
            ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
            ('ALIGN', (1, 0), (-1, -1), 'CENTER'),
            ('GRID', (0, 0), (-1, -1), 0.5, black),
        ]))
        return table

    def write_json(self, report: MetricsReport, path: str, additional_context: Optional[Dict] = None) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.generate_json_report(report, additional_context), f, indent=2)
            f.write("\n")
