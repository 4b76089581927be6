# HyperDistill: זיקוק מדיניות רב-רובוטית לרשת-על שמייצרת MLP קטן לכל רובוט
__version__ = "1.0.0"
