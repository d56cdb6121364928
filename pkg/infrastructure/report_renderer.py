import logging
from typing import List

from jinja2 import Template

from models.schemas import EvalMetrics, ExperimentReport, Explanation, ExtensionReport, SweepReport

logger = logging.getLogger(__name__)


def _num(value, width: int = 12) -> str:
    if value is None:
        return "-".rjust(width)
    return f"{value:.6g}".rjust(width)


EXPLANATION_TEMPLATE = """\
{% for e in explanations -%}
Instance {{ loop.index0 }}: prediction {{ fmt(e.prediction, 0) }}
  {{ "feature".ljust(name_width) }} {{ "value".rjust(12) }} {{ "coefficient".rjust(12) }} {{ "contribution".rjust(12) }}
  {{ "(intercept)".ljust(name_width) }} {{ "".rjust(12) }} {{ fmt(e.intercept) }} {{ fmt(e.intercept) }}
{% for name in e.feature_names -%}
{%- set i = loop.index0 %}  {{ name.ljust(name_width) }} {{ fmt(e.instance[i]) }} {{ fmt(e.coefficients[i]) }} {{ fmt(e.contributions[i]) }}
{% endfor %}
{% endfor -%}
"""

EXTENSION_TEMPLATE = """\
{{ "index".rjust(6) }} {{ "neighbor".rjust(8) }} {{ "extended".rjust(12) }} {{ "true".rjust(12) }} {{ "gap".rjust(12) }}
{% for row in report.rows -%}
{{ (row.index|string).rjust(6) }} {{ (row.neighbor_index|string).rjust(8) }} {{ fmt(row.extended_prediction) }} {{ fmt(row.true_prediction) }} {{ fmt(row.gap) }}
{% endfor -%}
mean gap: {{ fmt(report.mean_gap, 0) }}
"""

METRICS_TEMPLATE = """\
n:    {{ m.n }}
mse:  {{ fmt(m.mse, 0) }} ± {{ fmt(m.mse_standard_error, 0) }}
mae:  {{ fmt(m.mae, 0) }} ± {{ fmt(m.mae_standard_error, 0) }}
{% if m.accuracy is not none -%}
accuracy: {{ fmt(m.accuracy, 0) }}
log loss: {{ fmt(m.log_loss, 0) }}
{% endif -%}
"""

EXPERIMENT_TEMPLATE = """\
Dataset: {{ report.dataset }} (seed {{ report.seed }}, {{ report.protocol }})
{{ "model".ljust(6) }} {{ "test mse".rjust(12) }} {{ "± se".rjust(12) }} {{ "test mae".rjust(12) }} {{ "± se".rjust(12) }} {{ "avg sq grad".rjust(12) }}  hyperparameters
{% for row in report.rows -%}
{{ row.model.ljust(6) }} {{ fmt(row.test_mse) }} {{ fmt(row.mse_standard_error) }} {{ fmt(row.test_mae) }} {{ fmt(row.mae_standard_error) }} {{ fmt(row.avg_squared_gradient) }}  {{ params(row.hyperparameters) }}
{% endfor -%}
Standard errors: {{ report.standard_error_definition }}
"""

SWEEP_TEMPLATE = """\
Dataset: {{ report.dataset }} (seed {{ report.seed }})
{{ "lambda".rjust(12) }} {{ "epochs".rjust(6) }} {{ "train mse".rjust(12) }} {{ "test mse".rjust(12) }} {{ "train grad".rjust(12) }} {{ "test grad".rjust(12) }} {{ "ext gap".rjust(12) }}
{% for row in report.rows -%}
{{ fmt(row.penalty) }} {{ (row.epochs|string).rjust(6) }} {{ fmt(row.train_mse) }} {{ fmt(row.test_mse) }} {{ fmt(row.train_avg_squared_gradient) }} {{ fmt(row.test_avg_squared_gradient) }} {{ fmt(row.extension_mean_gap) }}
{% endfor -%}
"""


class ReportRenderer:
    """Aligned plain-text views of the JSON artifacts"""

    def render_explanations(self, explanations: List[Explanation]) -> str:
        names = [name for e in explanations for name in e.feature_names] + ["(intercept)"]
        return Template(EXPLANATION_TEMPLATE).render(
            explanations=explanations,
            name_width=max(len(name) for name in names),
            fmt=_num,
        )

    def render_extension(self, report: ExtensionReport) -> str:
        return Template(EXTENSION_TEMPLATE).render(report=report, fmt=_num)

    def render_metrics(self, metrics: EvalMetrics) -> str:
        return Template(METRICS_TEMPLATE).render(m=metrics, fmt=_num)

    def render_experiment(self, report: ExperimentReport) -> str:
        return Template(EXPERIMENT_TEMPLATE).render(
            report=report,
            fmt=_num,
            params=lambda h: ", ".join(f"{k}={v}" for k, v in h.items()),
        )

    def render_sweep(self, report: SweepReport) -> str:
        return Template(SWEEP_TEMPLATE).render(report=report, fmt=_num)
