"""
Report files: evaluation reports (JSON + fixed-width table) and sweep tables
(CSV, XLSX and a stdout table).
"""

import csv
import json
import logging

from openpyxl import Workbook
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ['axis', 'point', 'setting', 'full', 'rare', 'non_rare', 'unseen', 'seen',
                 'initial_loss', 'final_loss']


def write_eval_reports(reports, output_dir, verbs, objects, stem='report'):
    """One JSON document for every setting plus the matching text table"""
    payload = {r.setting: r.to_dict(verbs, objects) for r in reports}
    json_path = output_dir / f'{stem}.json'
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding='utf-8')

    table = '\n\n'.join(r.as_table(verbs, objects) for r in reports)
    table_path = output_dir / f'{stem}.txt'
    table_path.write_text(table + '\n', encoding='utf-8')
    logger.info(f"wrote evaluation report to {json_path}")
    return json_path, table_path, table


def sweep_row(axis, point, report, history):
    row = {'axis': axis, 'point': str(point), 'setting': report.setting}
    for partition in ('full', 'rare', 'non_rare', 'unseen', 'seen'):
        row[partition] = report.mean_ap.get(partition)
    row['initial_loss'] = history[0]['total'] if history else None
    row['final_loss'] = history[-1]['total'] if history else None
    return row


def format_sweep_table(rows):
    def fmt(value):
        if value is None:
            return 'n/a'
        if isinstance(value, float):
            return f"{value:.4f}"
        return str(value)

    widths = {c: max([len(c)] + [len(fmt(r.get(c))) for r in rows]) for c in SWEEP_COLUMNS}
    lines = ['  '.join(c.ljust(widths[c]) for c in SWEEP_COLUMNS)]
    for row in rows:
        lines.append('  '.join(fmt(row.get(c)).ljust(widths[c]) for c in SWEEP_COLUMNS))
    return '\n'.join(lines)


def write_sweep_csv(rows, path):
    with path.open('w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow(['' if row.get(c) is None else row.get(c) for c in SWEEP_COLUMNS])
    return path


def write_sweep_xlsx(rows, path, title):
    """Sweep table as a styled workbook"""
    wb = Workbook()
    ws = wb.active
    ws.title = "Sweep"

    # Styles
    header_font = Font(bold=True, color="FFFFFF")
    header_fill = PatternFill(start_color="4472C4", end_color="4472C4", fill_type="solid")
    border = Border(
        left=Side(style='thin'),
        right=Side(style='thin'),
        top=Side(style='thin'),
        bottom=Side(style='thin')
    )

    # Title
    last_column = get_column_letter(len(SWEEP_COLUMNS))
    ws.merge_cells(f'A1:{last_column}1')
    ws['A1'] = title
    ws['A1'].font = Font(bold=True, size=14)
    ws['A1'].alignment = Alignment(horizontal='center')

    # Headers
    for col, header in enumerate(SWEEP_COLUMNS, 1):
        cell = ws.cell(row=3, column=col, value=header)
        cell.font = header_font
        cell.fill = header_fill
        cell.border = border
        cell.alignment = Alignment(horizontal='center')

    # Data
    for row_num, row in enumerate(rows, 4):
        for col, column in enumerate(SWEEP_COLUMNS, 1):
            cell = ws.cell(row=row_num, column=col, value=row.get(column))
            cell.border = border
            if isinstance(row.get(column), float):
                cell.number_format = '0.0000'

    ws.column_dimensions['A'].width = 18
    ws.column_dimensions['B'].width = 16
    ws.column_dimensions['C'].width = 14
    for col in range(4, len(SWEEP_COLUMNS) + 1):
        ws.column_dimensions[get_column_letter(col)].width = 12

    wb.save(path)
    return path
