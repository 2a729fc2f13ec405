"""Small databases for the two synthetic-rewrite worked examples."""

import sqlite3

from sqlharness.schema import ColumnSpec, DatabaseSchema, QuestionTask, TableSchema, normalize_type

RESTAURANT_SQL = """
CREATE TABLE geographic (city TEXT PRIMARY KEY, county TEXT, region TEXT);
CREATE TABLE generalinfo (id_restaurant INTEGER PRIMARY KEY, label TEXT, food_type TEXT, city TEXT, review REAL);
CREATE TABLE location (id_restaurant INTEGER PRIMARY KEY, street_num INTEGER, street_name TEXT, city TEXT);
INSERT INTO geographic VALUES ('alameda', 'alameda county', 'bay area'), ('nowhere', 'unknown', 'unknown'),
  ('elsewhere', 'unknown', 'unknown'), ('fresno', 'fresno county', 'valley');
INSERT INTO generalinfo VALUES (1, 'sparky''s', '24 hour diner', 'alameda', 2.3),
  (2, 'kabul', 'afghani', 'nowhere', 3.8), (3, 'the dock', 'seafood', 'elsewhere', 2.0),
  (4, 'taqueria', 'mexican', 'fresno', 3.1), (5, 'green bowl', 'vegan', 'nowhere', 4.0);
INSERT INTO location VALUES (1, 242, 'church st', 'alameda'), (2, 135, 'main st', 'nowhere'),
  (3, 9, 'pier rd', 'elsewhere'), (4, 77, 'blackstone ave', 'fresno'), (5, 3, 'oak st', 'nowhere');
"""

RESTAURANT_GOLD = ("SELECT T2.label FROM location AS T1 INNER JOIN generalinfo AS T2 "
                   "ON T1.id_restaurant = T2.id_restaurant INNER JOIN geographic AS T3 ON T2.city = T3.city "
                   "WHERE T3.region = 'unknown' LIMIT 3")
RESTAURANT_REWRITES = [
    ("SELECT gi.label FROM generalinfo gi, geographic g WHERE gi.city = g.city AND g.region = 'unknown' LIMIT 3",
     0.8),
    ("SELECT label FROM generalinfo WHERE id_restaurant IN (SELECT id_restaurant FROM location WHERE city IN "
     "(SELECT city FROM geographic WHERE region = 'unknown')) LIMIT 3", 0.7),
    ("SELECT label FROM generalinfo WHERE city IN (SELECT city FROM geographic WHERE region = 'unknown') LIMIT 3",
     0.6),
]

PRODUCT_SQL = """
CREATE TABLE Product (ProductID INTEGER PRIMARY KEY, Name TEXT, Color TEXT);
CREATE TABLE ProductListPriceHistory (ProductID INTEGER, StartDate TEXT, ListPrice REAL,
  PRIMARY KEY (ProductID, StartDate));
INSERT INTO Product VALUES (1, 'LL Fork', NULL), (2, 'ML Fork', NULL), (3, 'HL Fork', 'Black');
INSERT INTO ProductListPriceHistory VALUES (1, '2011-05-31', 148.22), (1, '2012-05-30', 148.22),
  (1, '2013-05-30', 148.22), (2, '2012-05-30', 175.49), (3, '2013-05-30', 229.49);
"""

PRODUCT_GOLD = ("SELECT T2.ListPrice FROM Product AS T1 INNER JOIN ProductListPriceHistory AS T2 "
                "ON T1.ProductID = T2.ProductID WHERE T1.Name = 'LL Fork'")
# the published second rewrite has a stray ')' before LIMIT; fixed here
PRODUCT_REWRITES = [
    ("SELECT ProductListPriceHistory.ListPrice FROM Product JOIN ProductListPriceHistory "
     "ON Product.ProductID = ProductListPriceHistory.ProductID WHERE Product.Name = 'LL Fork'", 0.95),
    ("SELECT plph.ListPrice FROM Product p, ProductListPriceHistory plph WHERE p.ProductID = plph.ProductID "
     "AND p.Name = 'LL Fork' LIMIT 3", 0.85),
    ("SELECT ListPrice FROM ProductListPriceHistory WHERE ProductID IN "
     "(SELECT ProductID FROM Product WHERE Name = 'LL Fork')", 0.75),
]
PRODUCT_TYPO = ("SELECT plph.ListPrice FROM Product p, ProductListPriceHistory plph WHERE p.ProductID = plph.ProductID "
                "AND p.Name = 'LL Fork') LIMIT 3")

CUSTOMERS_DESCRIPTIONS = {
    ("customers", "customer_id"): "unique customer id",
    ("customers", "name"): "name of the customer",
    ("customers", "email_address"): "email address of the customer",
    ("order", "order_id"): "unique order id.",
    ("order", "customer_id"): "unique customer id.",
    ("order", "order_amount"): "amount spent by the customer on the order",
}
CUSTOMERS_SQL = """
CREATE TABLE customers (customer_id int, name varchar(100), email_address varchar(255));
CREATE TABLE "order" (order_id int, customer_id int, order_amount decimal(10, 2));
"""
CUSTOMERS_GOLD = """SELECT customers.first_name
FROM customers
JOIN order ON customers.customer_id = order.customer_id
GROUP BY customers.customer_id, customers.first_name
ORDER BY SUM(order.order_amount) DESC
LIMIT 1;"""


def build(path, script, db_id, descriptions=None):
    """Create the database file and derive a schema from its catalog."""
    descriptions = descriptions or {}
    conn = sqlite3.connect(path)
    conn.executescript(script)
    conn.commit()
    tables = []
    names = [r[0] for r in conn.execute("SELECT name FROM sqlite_master WHERE type='table' ORDER BY rowid")]
    for ti, name in enumerate(names):
        info = conn.execute(f'PRAGMA table_info("{name}")').fetchall()
        cols = tuple(ColumnSpec(ti, r[1], normalize_type(r[2]), r[2], descriptions.get((name, r[1])))
                     for r in info)
        pk = tuple(i for i, r in enumerate(info) if r[5])
        tables.append(TableSchema(name, cols, pk))
    conn.close()
    return DatabaseSchema(db_id, tuple(tables), (), str(path))


def task(qid, db_id, question, gold):
    return QuestionTask(qid, db_id, question, gold_sql=gold)
