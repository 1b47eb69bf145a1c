import pytest

SAMPLE_TRACE = """\
$2;1753777000000000001;Test_Order_AddItemToCart
$1;1753777000000001201;OrderActionBean.addItemToCart(java.lang.String,int);<no-session-id>;2499076000000000001;1753777000000001101;1753777000000001400;localhost;2;1
$1;1753777000000002202;AccountService.getCartByUser(java.lang.String);<no-session-id>;2499076000000000001;1753777000000001210;1753777000000001290;localhost;3;2
$1;1753777000000003203;OrderService.addItemToCart(model.Cart,jva.lang.String,int);<no-session-id>;2499076000000000001;1753777000000001230;1753777000000001275;localhost;4;3
$1;1753777000000004204;OrderActionBean.setQuantity(int);<no-session-id>;2499076000000000001;1753777000000001500;1753777000000001550;localhost;5;2
"""

ENTRY = "OrderActionBean.addItemToCart(java.lang.String,int)"
CART = "AccountService.getCartByUser(java.lang.String)"
SERVICE_ADD = "OrderService.addItemToCart(model.Cart,jva.lang.String,int)"
QUANTITY = "OrderActionBean.setQuantity(int)"


@pytest.fixture
def sample_trace():
    return SAMPLE_TRACE
