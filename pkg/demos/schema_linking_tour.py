"""Content matching and column selection on the california_schools fixture.

Shows which database values a question links to, which columns a draft
SQL query touches, what the embedding retriever picks, and how the
selections change the prompt.
"""

import tempfile

from sqlharness import (PromptStyle, SelectionSet, apply_selection, build_prompt, extract_content,
                        extract_references, load_question_set, load_schema_catalog, retrieve_columns,
                        score_selection)
from sqlharness.datasets import materialize
from sqlharness.schema import attach_sample_values, catalog_by_id

DRAFT = ("SELECT `FRPM Count (K-12)` / `Enrollment (K-12)` FROM frpm WHERE `County Name` = 'Alameda' "
         "ORDER BY (CAST(`FRPM Count (K-12)` AS REAL) / `Enrollment (K-12)`) DESC LIMIT 1")


def main():
    with tempfile.TemporaryDirectory() as tmp:
        paths = materialize(tmp)
        catalog = catalog_by_id(load_schema_catalog(paths.bird_tables, "bird_tables_json", paths.bird_db_root))
        schema = catalog["california_schools"]
        task = load_question_set(paths.bird_dev, catalog)[0]
        print("question:", task.question)

        matches = extract_content(task.question, schema)
        print("\nmatched values:")
        for line in matches.render_lines():
            print(" ", line)

        from_draft = extract_references(DRAFT, schema)
        truth = extract_references(task.gold_sql, schema, mode="ground_truth")
        print("\ncolumns in the draft SQL:", sorted(from_draft.columns))
        m = score_selection(from_draft, truth)
        print(f"  vs gold: recall {m.recall:.2f} precision {m.precision:.2f} f1 {m.f1:.2f}")

        retrieved = retrieve_columns(task.question, attach_sample_values(schema), top_k=5)
        print("\nretrieved columns:")
        for col in sorted(retrieved.columns, key=lambda c: -retrieved.scores[c]):
            print(f"  {retrieved.scores[col]:.3f}  {col}")

        base = build_prompt(schema, task)
        hard_sel = SelectionSet(from_draft.tables, from_draft.columns, integration="hard")
        soft_sel = SelectionSet(from_draft.tables, from_draft.columns, integration="soft")
        hard = build_prompt(schema, task, apply_selection(PromptStyle(), hard_sel))
        soft = build_prompt(schema, task, apply_selection(PromptStyle(), soft_sel))
        print(f"\nprompt sizes: full {len(base.rendered)}, hard {len(hard.rendered)}, soft {len(soft.rendered)} chars")
        print("\nhard-selected schema block:\n" + hard.x1)


if __name__ == "__main__":
    main()
